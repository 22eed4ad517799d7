#include <gtest/gtest.h>

#include <cstdio>

#include "mcpdet/optimizer.hpp"
#include "mcpdet/simulator.hpp"

using namespace mcpdet;

namespace {

GridCell cell(double iou_t, double conf_t, Regime reg, ConfusionCounts c) {
    GridCell g;
    g.iou_threshold = iou_t;
    g.conformal_threshold = conf_t;
    EvaluationReport r;
    r.regime = reg;
    r.thresholds = {iou_t, conf_t};
    r.counts = c;
    r.metrics = derive(c);
    g.reports[reg] = r;
    return g;
}

// Counts giving the requested sensitivity and specificity out of 100 each.
ConfusionCounts rates(int sens, int spec) {
    return {static_cast<std::uint64_t>(sens), static_cast<std::uint64_t>(100 - spec),
            static_cast<std::uint64_t>(spec), static_cast<std::uint64_t>(100 - sens)};
}

// One lesion per slice, each class on exactly four slices. Present-class
// boxes sit on the truth box at confidence .99; every absent class has one
// background box at .05 elsewhere.
std::vector<Sample> separable_corpus() {
    const Alphabet alpha;
    std::vector<Sample> out;
    for (std::size_t i = 0; i < 20; ++i) {
        Sample s;
        s.slice_id = "sep" + std::to_string(i);
        const std::size_t cls = i % 5;
        const Box lesion{100, 100, 160, 160};
        std::vector<GroundTruthLabel> truth;
        for (std::size_t c = 0; c < 5; ++c) {
            if (c == cls) {
                truth.push_back({ClassLabel{c}, Polarity::Present, {lesion}});
                s.detections.push_back({lesion, ClassLabel{c}, 0.99});
            } else {
                truth.push_back({ClassLabel{c}, Polarity::Absent, {}});
                const double x = 300.0 + 40.0 * static_cast<double>(c);
                s.detections.push_back({{x, 300, x + 30, 330}, ClassLabel{c}, 0.05});
            }
        }
        s.ground_truth = truth;
        out.push_back(s);
    }
    return out;
}

struct SimFixture {
    std::vector<Sample> test;
    CalibrationModel model;
};

SimFixture small_sim(std::size_t n) {
    SimConfig cfg;
    cfg.n_samples = n;
    cfg.ambiguity_rate = 0.2;
    cfg.seed = 71;
    auto cal = generate(cfg);
    cfg.seed = 72;
    auto test = generate(cfg);
    return {std::move(test.samples), calibrate(cal.samples, cfg.alphabet, "t")};
}

} // namespace

TEST(Grid, StandardIsTwentyOneByTwentyOne) {
    const auto g = ThresholdGrid::standard();
    EXPECT_EQ(g.size(), 441u);
    ASSERT_EQ(g.iou_values.size(), 21u);
    for (int k = 0; k <= 20; ++k) {
        // exact: each value is the double nearest its two-decimal spelling
        char text[8];
        std::snprintf(text, sizeof text, "%d.%02d", k * 5 / 100, k * 5 % 100);
        EXPECT_EQ(g.iou_values[static_cast<std::size_t>(k)], std::stod(text)) << text;
    }
    EXPECT_EQ(g.iou_values.back(), 1.0);
    EXPECT_EQ(g.conformal_values, g.iou_values);
}

TEST(Grid, RejectsBadAxes) {
    EXPECT_THROW((ThresholdGrid{{}, {0.5}}).validate(), Error);
    EXPECT_THROW((ThresholdGrid{{0.5, 0.4}, {0.5}}).validate(), Error);
    EXPECT_THROW((ThresholdGrid{{0.5}, {1.5}}).validate(), Error);
}

TEST(Sweep, CellCountAndOrder) {
    const auto fx = small_sim(20);
    const auto cells = sweep(fx.test, fx.model, ThresholdGrid::standard(), kAllRegimes);
    ASSERT_EQ(cells.size(), 441u);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        EXPECT_EQ(cells[i].iou_threshold, ThresholdGrid::standard().iou_values[i / 21]);
        EXPECT_EQ(cells[i].conformal_threshold, ThresholdGrid::standard().conformal_values[i % 21]);
        EXPECT_EQ(cells[i].reports.size(), 5u);
    }
}

TEST(Sweep, SingletonGrid) {
    const auto fx = small_sim(20);
    const Regime b[] = {Regime::MatrixB};
    const auto cells = sweep(fx.test, fx.model, ThresholdGrid{{0.5}, {0.5}}, b);
    ASSERT_EQ(cells.size(), 1u);
    EXPECT_EQ(cells[0].reports.count(Regime::MatrixB), 1u);
}

TEST(Sweep, MatchesIndependentInferAndEvaluate) {
    const auto fx = small_sim(10);
    const ThresholdGrid grid{{0.0, 0.3, 0.5, 0.95}, {0.0, 0.25, 0.5, 0.9, 1.0}};
    const auto cells = sweep(fx.test, fx.model, grid, kAllRegimes);
    std::vector<std::vector<GroundTruthLabel>> truths;
    for (const auto& s : fx.test) truths.push_back(*s.ground_truth);
    for (const auto& c : cells) {
        std::vector<SampleResult> results;
        for (const auto& s : fx.test) results.push_back(infer(s, fx.model, c.iou_threshold, c.conformal_threshold));
        for (Regime reg : kAllRegimes) {
            EXPECT_EQ(c.reports.at(reg), evaluate(results, truths, reg, fx.model.alphabet()))
                << to_string(reg) << " " << describe_cell(c.iou_threshold, c.conformal_threshold);
        }
    }
}

TEST(Sweep, AssertionsShrinkAlongEachRow) {
    const auto fx = small_sim(200);
    const auto cells = sweep(fx.test, fx.model, ThresholdGrid::standard(), kAllRegimes);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i % 21 == 0) continue;
        const auto& a = cells[i - 1].reports.at(Regime::MatrixA).counts;
        const auto& b = cells[i].reports.at(Regime::MatrixA).counts;
        EXPECT_LE(b.tp + b.fp, a.tp + a.fp) << i;
        const auto& ba = cells[i - 1].reports.at(Regime::MatrixB).counts;
        const auto& bb = cells[i].reports.at(Regime::MatrixB).counts;
        EXPECT_LE(bb.tp, ba.tp) << i;
    }
}

TEST(Sweep, ThreadCountDoesNotChangeResults) {
    const auto fx = small_sim(100);
    SweepOptions one, many;
    many.threads = 7;
    EXPECT_EQ(sweep(fx.test, fx.model, ThresholdGrid::standard(), kAllRegimes, one),
              sweep(fx.test, fx.model, ThresholdGrid::standard(), kAllRegimes, many));
}

TEST(Sweep, RequiresGroundTruthAndRegimes) {
    auto fx = small_sim(5);
    EXPECT_THROW(sweep(fx.test, fx.model, ThresholdGrid::standard(), std::span<const Regime>{}), Error);
    fx.test[2].ground_truth.reset();
    EXPECT_THROW(sweep(fx.test, fx.model, ThresholdGrid::standard(), kAllRegimes), Error);
}

TEST(SelectByAuroc, PrefersDominatingRow) {
    const std::vector<GridCell> cells = {
        cell(0.1, 0.2, Regime::MatrixB, rates(60, 60)), cell(0.1, 0.8, Regime::MatrixB, rates(40, 80)),
        cell(0.5, 0.2, Regime::MatrixB, rates(90, 70)), cell(0.5, 0.8, Regime::MatrixB, rates(80, 95)),
    };
    const auto sel = select_by_auroc(cells, Regime::MatrixB);
    EXPECT_EQ(sel.iou_threshold, 0.5);
    EXPECT_EQ(sel.conformal_threshold, 0.8);
    EXPECT_NEAR(sel.youden, 0.75, 1e-12);
    // trapezoids through (0,0) (.05,.8) (.3,.9) (1,1)
    EXPECT_NEAR(sel.auroc, 0.05 * 0.4 + 0.25 * 0.85 + 0.7 * 0.95, 1e-12);
}

TEST(SelectByAuroc, TiesGoToSmallerThresholds) {
    const std::vector<GridCell> cells = {
        cell(0.1, 0.2, Regime::MatrixA, rates(80, 80)), cell(0.1, 0.4, Regime::MatrixA, rates(80, 80)),
        cell(0.3, 0.2, Regime::MatrixA, rates(80, 80)), cell(0.3, 0.4, Regime::MatrixA, rates(80, 80)),
    };
    const auto sel = select_by_auroc(cells, Regime::MatrixA);
    EXPECT_EQ(sel.iou_threshold, 0.1);
    EXPECT_EQ(sel.conformal_threshold, 0.2);
}

TEST(SelectByAuroc, Errors) {
    const std::vector<GridCell> c = {cell(0.1, 0.2, Regime::MatrixC, {1, 0, std::nullopt, std::nullopt})};
    try {
        select_by_auroc(c, Regime::MatrixC);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidRegime);
    }
    // no TN/FN anywhere: nothing to trace
    const std::vector<GridCell> empty_rates = {cell(0.1, 0.2, Regime::MatrixB, {0, 0, 0, 0})};
    try {
        select_by_auroc(empty_rates, Regime::MatrixB);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NoSelection);
    }
    EXPECT_THROW(select_by_auroc(std::span<const GridCell>{}, Regime::MatrixB), Error);
    const std::vector<GridCell> ragged = {cell(0.1, 0.2, Regime::MatrixB, rates(1, 1)),
                                          cell(0.1, 0.4, Regime::MatrixB, rates(1, 1)),
                                          cell(0.3, 0.2, Regime::MatrixB, rates(1, 1))};
    EXPECT_THROW(select_by_auroc(ragged, Regime::MatrixB), Error);
}

TEST(SelectByPpv, HighestPpvThenTpThenThresholds) {
    const std::vector<GridCell> cells = {
        cell(0.5, 0.5, Regime::MatrixC, {9, 1, std::nullopt, std::nullopt}),
        cell(0.3, 0.7, Regime::MatrixC, {18, 2, std::nullopt, std::nullopt}),
        cell(0.3, 0.9, Regime::MatrixC, {18, 2, std::nullopt, std::nullopt}),
        cell(0.1, 0.1, Regime::MatrixC, {8, 2, std::nullopt, std::nullopt}),
        cell(0.9, 0.9, Regime::MatrixC, {0, 0, std::nullopt, std::nullopt}),
    };
    const auto sel = select_by_ppv(cells);
    EXPECT_EQ(sel.iou_threshold, 0.3);
    EXPECT_EQ(sel.conformal_threshold, 0.7);
    EXPECT_EQ(sel.tp, 18u);
    EXPECT_NEAR(sel.ppv, 0.9, 1e-12);
}

TEST(SelectByPpv, NothingAssertedIsNoSelection) {
    const std::vector<GridCell> cells = {cell(0.5, 0.5, Regime::MatrixC, {0, 0, std::nullopt, std::nullopt})};
    try {
        select_by_ppv(cells);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NoSelection);
    }
}

TEST(Selection, SeparableCorpusReachesPerfectOperatingPoint) {
    const auto corpus = separable_corpus();
    const auto model = calibrate(corpus, Alphabet{}, "t");
    const auto cells = sweep(corpus, model, ThresholdGrid::standard(), kAllRegimes);
    for (Regime reg : {Regime::MatrixA, Regime::MatrixB, Regime::ExtClassification}) {
        const auto sel = select_by_auroc(cells, reg);
        const auto it = std::find_if(cells.begin(), cells.end(), [&](const GridCell& c) {
            return c.iou_threshold == sel.iou_threshold && c.conformal_threshold == sel.conformal_threshold;
        });
        ASSERT_NE(it, cells.end());
        const auto& m = it->reports.at(reg).metrics;
        EXPECT_EQ(*m.sensitivity, 1.0) << to_string(reg);
        EXPECT_EQ(*m.specificity, 1.0) << to_string(reg);
        EXPECT_EQ(sel.auroc, 1.0);
    }
    EXPECT_EQ(select_by_ppv(cells).ppv, 1.0);
}
