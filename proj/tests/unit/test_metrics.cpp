#include <gtest/gtest.h>

#include "mcpdet/calibration.hpp"
#include "mcpdet/metrics.hpp"
#include "mcpdet/simulator.hpp"

using namespace mcpdet;

namespace {

const Alphabet kAlpha;

std::vector<GroundTruthLabel> truth_with(std::vector<std::pair<std::size_t, Box>> present) {
    std::vector<GroundTruthLabel> t;
    for (std::size_t c = 0; c < kAlpha.size(); ++c) t.push_back({ClassLabel{c}, Polarity::Absent, {}});
    for (const auto& [c, b] : present) {
        t[c].polarity = Polarity::Present;
        t[c].boxes.push_back(b);
    }
    return t;
}

// Cluster at `where` asserting presence of every class in `present`.
Cluster asserting(Box where, std::vector<std::size_t> present, std::vector<std::size_t> absent = {}) {
    Cluster cl;
    cl.members.resize(kAlpha.size());
    for (std::size_t c : present) {
        cl.members[c] = Detection{where, ClassLabel{c}, 0.9};
        cl.prediction_set.push_back({ClassLabel{c}, Polarity::Present, 0.9, 0.9});
    }
    for (std::size_t c : absent) cl.prediction_set.push_back({ClassLabel{c}, Polarity::Absent, 0.9, 0.1});
    cl.delimiter = present.empty() ? Detection{where, ClassLabel{0}, 0.1} : *cl.members[present.front()];
    return cl;
}

SampleResult result_of(std::vector<Cluster> clusters, double iou_t = 0.5) {
    SampleResult r;
    r.slice_id = "s";
    r.clusters = std::move(clusters);
    r.thresholds = {iou_t, 0.5};
    return r;
}

ConfusionCounts counts(Regime reg, const SampleResult& r, const std::vector<GroundTruthLabel>& t) {
    return score_sample(r, t, MatchSpec::for_regime(reg), kAlpha);
}

const Box kBox{10, 10, 50, 50};
const Box kFar{300, 300, 340, 340};

} // namespace

TEST(Derive, ReferenceCountsMatrixA) {
    const auto m = derive({1952, 187, 1358, 153});
    EXPECT_NEAR(*m.f1, 0.920, 0.0005);
    EXPECT_NEAR(*m.sensitivity, 0.927, 0.0005);
    EXPECT_NEAR(*m.specificity, 0.879, 0.0005);
    EXPECT_NEAR(*m.ppv, 0.913, 0.0005);
    EXPECT_NEAR(*m.npv, 0.899, 0.0005);
    // f1 equals the harmonic mean of ppv and sensitivity
    EXPECT_NEAR(*m.f1, 2 * *m.ppv * *m.sensitivity / (*m.ppv + *m.sensitivity), 1e-12);
}

TEST(Derive, ReferenceCountsMatrixC) {
    const auto m = derive({347, 30, std::nullopt, std::nullopt});
    EXPECT_NEAR(*m.ppv, 0.920, 0.0005);
    EXPECT_FALSE(m.sensitivity || m.specificity || m.npv || m.f1);
}

TEST(Derive, UndefinedDenominatorsAreAbsent) {
    const auto m = derive({0, 0, 5, 0});
    EXPECT_FALSE(m.sensitivity);
    EXPECT_FALSE(m.ppv);
    EXPECT_FALSE(m.f1);
    EXPECT_DOUBLE_EQ(*m.specificity, 1.0);
    EXPECT_DOUBLE_EQ(*m.npv, 1.0);
    const auto z = derive({0, 0, 0, 0});
    EXPECT_FALSE(z.sensitivity || z.specificity || z.ppv || z.npv || z.f1);
}

TEST(Derive, MetricsStayInUnitInterval) {
    Rng rng(41);
    for (int i = 0; i < 2000; ++i) {
        const auto m = derive({rng.below(20), rng.below(20), rng.below(20), rng.below(20)});
        for (const auto& v : {m.sensitivity, m.specificity, m.ppv, m.npv, m.f1}) {
            if (v) {
                EXPECT_GE(*v, 0.0);
                EXPECT_LE(*v, 1.0);
            }
        }
    }
}

TEST(ScoreSample, PerfectSingleBoxMatrixA) {
    const auto r = result_of({asserting(kBox, {0})});
    const auto c = counts(Regime::MatrixA, r, truth_with({{0, kBox}}));
    EXPECT_EQ(c, (ConfusionCounts{1, 0, 4, 0}));
}

TEST(ScoreSample, TotalMissMatrixA) {
    const auto c = counts(Regime::MatrixA, result_of({}), truth_with({{4, kBox}}));
    EXPECT_EQ(c, (ConfusionCounts{0, 0, 4, 1}));
}

TEST(ScoreSample, MislocalizedAssertionDiffersBetweenAAndB) {
    const auto r = result_of({asserting(kFar, {0})});
    const auto t = truth_with({{0, kBox}});
    EXPECT_EQ(counts(Regime::MatrixA, r, t), (ConfusionCounts{0, 1, 4, 1}));
    EXPECT_EQ(counts(Regime::MatrixB, r, t), (ConfusionCounts{1, 0, 4, 0}));
    EXPECT_EQ(counts(Regime::ExtClassification, r, t), (ConfusionCounts{1, 0, 4, 0}));
}

TEST(ScoreSample, WrongClassIsFalsePositiveAndMiss) {
    const auto r = result_of({asserting(kBox, {2})});
    const auto t = truth_with({{0, kBox}});
    EXPECT_EQ(counts(Regime::MatrixA, r, t), (ConfusionCounts{0, 1, 3, 1}));
    EXPECT_EQ(counts(Regime::MatrixB, r, t), (ConfusionCounts{0, 1, 3, 1}));
}

TEST(ScoreSample, DuplicateAssertionsOfOneInstance) {
    // two clusters on the same lesion: one instance, counted once
    const auto r = result_of({asserting(kBox, {0}), asserting(Box{11, 11, 51, 51}, {0})});
    EXPECT_EQ(counts(Regime::MatrixA, r, truth_with({{0, kBox}})), (ConfusionCounts{1, 0, 4, 0}));
}

TEST(ScoreSample, MatrixCExactSingleton) {
    const auto t = truth_with({{0, kBox}});
    EXPECT_EQ(counts(Regime::MatrixC, result_of({asserting(kBox, {0})}), t),
              (ConfusionCounts{1, 0, std::nullopt, std::nullopt}));
    // two presences in one cluster: not exact
    EXPECT_EQ(counts(Regime::MatrixC, result_of({asserting(kBox, {0, 1})}), t),
              (ConfusionCounts{0, 1, std::nullopt, std::nullopt}));
    // contradictory presence and absence
    EXPECT_EQ(counts(Regime::MatrixC, result_of({asserting(kBox, {0}, {0})}), t),
              (ConfusionCounts{0, 1, std::nullopt, std::nullopt}));
    // mislocalized singleton
    EXPECT_EQ(counts(Regime::MatrixC, result_of({asserting(kFar, {0})}), t),
              (ConfusionCounts{0, 1, std::nullopt, std::nullopt}));
    // clusters without a presence assertion are not counted
    EXPECT_EQ(counts(Regime::MatrixC, result_of({asserting(kFar, {}, {1})}), t),
              (ConfusionCounts{0, 0, std::nullopt, std::nullopt}));
    // a second truth class at the same location makes the singleton inexact
    EXPECT_EQ(counts(Regime::MatrixC, result_of({asserting(kBox, {0})}), truth_with({{0, kBox}, {1, kBox}})),
              (ConfusionCounts{0, 1, std::nullopt, std::nullopt}));
}

TEST(ScoreSample, ExactClassificationPerSlice) {
    const auto both = truth_with({{0, kBox}, {2, kFar}});
    const ConfusionCounts none{0, 0, 0, std::nullopt};
    EXPECT_EQ(counts(Regime::ExtExactClassification, result_of({asserting(kBox, {0}), asserting(kFar, {2})}), both),
              (ConfusionCounts{1, 0, 0, std::nullopt}));
    EXPECT_EQ(counts(Regime::ExtExactClassification, result_of({asserting(kBox, {0})}), both),
              (ConfusionCounts{0, 1, 0, std::nullopt}));
    EXPECT_EQ(counts(Regime::ExtExactClassification, result_of({}), truth_with({})),
              (ConfusionCounts{0, 0, 1, std::nullopt}));
    // missed positive slice: FN undefined, nothing counted
    EXPECT_EQ(counts(Regime::ExtExactClassification, result_of({}), both), none);
}

TEST(ScoreSample, MissingTruthIsAnError) {
    auto t = truth_with({});
    t.pop_back();
    try {
        counts(Regime::MatrixA, result_of({}), t);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::EvaluationInput);
    }
}

TEST(ScoreSample, AdditiveAndADominatedByB) {
    SimConfig cfg;
    cfg.n_samples = 500;
    cfg.seed = 3;
    const auto cal = generate(cfg);
    cfg.seed = 4;
    const auto test = generate(cfg);
    const auto model = calibrate(cal.samples, cfg.alphabet, "t");
    std::vector<SampleResult> results;
    std::vector<std::vector<GroundTruthLabel>> truths;
    for (const auto& s : test.samples) {
        results.push_back(infer(s, model, 0.5, 0.5));
        truths.push_back(*s.ground_truth);
    }
    for (Regime reg : kAllRegimes) {
        ConfusionCounts sum = ConfusionCounts::zero_for(MatchSpec::for_regime(reg));
        for (std::size_t i = 0; i < results.size(); ++i) {
            const auto c = score_sample(results[i], truths[i], MatchSpec::for_regime(reg), cfg.alphabet);
            sum += c;
            if (reg == Regime::MatrixA) {
                const auto b = score_sample(results[i], truths[i], MatchSpec::for_regime(Regime::MatrixB), cfg.alphabet);
                EXPECT_LE(c.tp, b.tp);
            }
        }
        const auto report = evaluate(results, truths, reg, cfg.alphabet);
        EXPECT_EQ(report.counts, sum) << to_string(reg);
        EXPECT_EQ(report.metrics, derive(sum));
    }
}

TEST(Evaluate, RejectsMixedThresholds) {
    std::vector<SampleResult> r = {result_of({}, 0.5), result_of({}, 0.6)};
    std::vector<std::vector<GroundTruthLabel>> t = {truth_with({}), truth_with({})};
    EXPECT_THROW(evaluate(r, t, Regime::MatrixB, kAlpha), Error);
}

TEST(Regime, NamesRoundTrip) {
    for (Regime r : kAllRegimes) EXPECT_EQ(parse_regime(to_string(r)), r);
    EXPECT_EQ(parse_regime("B"), Regime::MatrixB);
    EXPECT_THROW(parse_regime("matrix_z"), Error);
}

TEST(Auroc, Examples) {
    EXPECT_DOUBLE_EQ(auroc(std::vector<RocPoint>{{0, 0}, {0, 1}, {1, 1}}).area, 1.0);
    const auto chance = auroc(std::vector<RocPoint>{{0, 0}, {1, 1}});
    EXPECT_DOUBLE_EQ(chance.area, 0.5);
    EXPECT_TRUE(chance.degenerate);
    EXPECT_TRUE(auroc(std::vector<RocPoint>{}).degenerate);
    EXPECT_NEAR(auroc(std::vector<RocPoint>{{0.2, 0.6}}).area, 0.7, 1e-12);
    EXPECT_FALSE(auroc(std::vector<RocPoint>{{0.2, 0.6}}).degenerate);
}

TEST(Auroc, OrderInvariantAndIgnoresDominatedPoints) {
    Rng rng(42);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<RocPoint> pts;
        for (int i = 0; i < 8; ++i) pts.push_back({static_cast<double>(rng.below(10)) / 10.0, rng.uniform()});
        const double a = auroc(pts).area;
        auto shuffled = pts;
        rng.shuffle(shuffled);
        EXPECT_DOUBLE_EQ(auroc(shuffled).area, a);
        // same FPR as an existing point, lower TPR
        auto more = pts;
        more.push_back({pts[0].fpr, pts[0].tpr * 0.5});
        EXPECT_DOUBLE_EQ(auroc(more).area, a);
    }
    EXPECT_THROW(auroc(std::vector<RocPoint>{{1.2, 0.5}}), Error);
}

namespace {
SampleResult ap_result(std::vector<std::pair<Box, double>> boxes) {
    SampleResult r;
    r.slice_id = "ap";
    for (const auto& [b, conf] : boxes) {
        Cluster cl;
        cl.members.resize(kAlpha.size());
        cl.members[0] = Detection{b, ClassLabel{0}, conf};
        cl.delimiter = *cl.members[0];
        cl.prediction_set = {{ClassLabel{0}, Polarity::Present, 0.9, conf}};
        r.clusters.push_back(cl);
    }
    return r;
}
} // namespace

TEST(MeanAveragePrecision, HandEnumeratedFixtures) {
    const std::vector<std::vector<GroundTruthLabel>> one_gt = {truth_with({{0, kBox}})};

    const std::vector<SampleResult> perfect = {ap_result({{kBox, 0.9}})};
    EXPECT_EQ(*mean_average_precision(perfect, one_gt, 0.95, kAlpha).mean, 1.0);

    // TP ranked above FP: precision 1 at recall 1
    const std::vector<SampleResult> tp_first = {ap_result({{kBox, 0.9}, {kFar, 0.4}})};
    EXPECT_EQ(*mean_average_precision(tp_first, one_gt, 0.95, kAlpha).mean, 1.0);

    // FP ranked above TP: precision 1/2 at recall 1
    const std::vector<SampleResult> fp_first = {ap_result({{kFar, 0.9}, {kBox, 0.4}})};
    EXPECT_EQ(*mean_average_precision(fp_first, one_gt, 0.95, kAlpha).mean, 0.5);
}

TEST(MeanAveragePrecision, ClassesWithoutTruthAreExcluded) {
    const std::vector<std::vector<GroundTruthLabel>> gt = {truth_with({{0, kBox}})};
    const std::vector<SampleResult> r = {ap_result({{kBox, 0.9}})};
    const auto ap = mean_average_precision(r, gt, 0.5, kAlpha);
    EXPECT_TRUE(ap.per_class[0].has_value());
    for (std::size_t c = 1; c < 5; ++c) EXPECT_FALSE(ap.per_class[c].has_value());
    const std::vector<std::vector<GroundTruthLabel>> empty = {truth_with({})};
    EXPECT_FALSE(mean_average_precision(r, empty, 0.5, kAlpha).mean.has_value());
}

TEST(MeanAveragePrecision, OneOnPerfectCorpora) {
    Rng rng(43);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<SampleResult> results;
        std::vector<std::vector<GroundTruthLabel>> truths;
        for (int i = 0; i < 20; ++i) {
            std::vector<std::pair<std::size_t, Box>> present;
            SampleResult r;
            r.slice_id = std::to_string(i);
            for (std::size_t c = 0; c < 5; ++c) {
                if (!rng.bernoulli(0.4)) continue;
                const double x = 60.0 * static_cast<double>(c);
                const Box b{x, 0, x + 40, 40};
                present.push_back({c, b});
                Cluster cl;
                cl.members.resize(5);
                cl.members[c] = Detection{b, ClassLabel{c}, rng.uniform()};
                cl.delimiter = *cl.members[c];
                cl.prediction_set = {{ClassLabel{c}, Polarity::Present, 0.9, cl.delimiter.confidence}};
                r.clusters.push_back(cl);
            }
            results.push_back(r);
            truths.push_back(truth_with(present));
        }
        const auto ap = mean_average_precision(results, truths, 0.95, kAlpha);
        if (ap.mean) {
            EXPECT_EQ(*ap.mean, 1.0);
        }
    }
}

TEST(TwoProportion, Examples) {
    EXPECT_DOUBLE_EQ(two_proportion_test(50, 100, 50, 100), 1.0);
    EXPECT_LT(two_proportion_test(1952, 2105, 1325, 9121), 1e-5);
    EXPECT_LT(two_proportion_test(0, 10, 10, 10), 1e-3);
    // p1=.6, p2=.4, pooled .5: z = .2 / sqrt(.25 * .02) = 2 sqrt 2, so p = erfc(2)
    EXPECT_NEAR(two_proportion_test(60, 100, 40, 100), std::erfc(2.0), 1e-12);
    EXPECT_DOUBLE_EQ(two_proportion_test(0, 10, 0, 20), 1.0);
    EXPECT_THROW(two_proportion_test(5, 4, 1, 2), Error);
    EXPECT_THROW(two_proportion_test(0, 0, 1, 2), Error);
}

TEST(FlagAgreement, Counts) {
    std::vector<SampleResult> r(4);
    r[0].challenging = true;
    r[1].challenging = false;
    r[2].challenging = true;
    r[3].challenging = false;
    const auto a = flag_agreement(r, {true, true, false, false});
    EXPECT_EQ(a.truly_challenging, 2u);
    EXPECT_EQ(a.flagged_challenging, 1u);
    EXPECT_EQ(a.false_flags, 1u);
    EXPECT_DOUBLE_EQ(a.accuracy(), 0.5);
    EXPECT_DOUBLE_EQ(*a.identification_rate(), 0.5);
    EXPECT_DOUBLE_EQ(*a.false_flag_rate(), 0.5);
    EXPECT_THROW(flag_agreement(r, {true}), Error);
}
