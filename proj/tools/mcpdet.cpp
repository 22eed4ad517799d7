// Command-line front end: simulate, split, calibrate, predict, evaluate, optimize.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mcpdet/mcpdet.hpp"

namespace {

using namespace mcpdet;
namespace fs = std::filesystem;

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<double> parse_numbers(const std::string& text, const char* what) {
    std::vector<double> out;
    for (const auto& item : split_list(text)) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) {
            throw Error(ErrorKind::InvalidInput, std::string("bad number '") + item + "' in " + what);
        }
        out.push_back(v);
    }
    return out;
}

Alphabet parse_alphabet(const std::string& text) {
    return text.empty() ? Alphabet{} : Alphabet(split_list(text));
}

std::vector<Regime> parse_regimes(const std::string& text) {
    std::vector<Regime> out;
    for (const auto& item : split_list(text)) out.push_back(parse_regime(item));
    return out;
}

fs::path or_default(const std::string& given, const char* name) {
    return given.empty() ? cli::default_output(name) : fs::path(given);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mondrian conformal prediction sets for multi-class detections"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string classes;
    app.add_option("--classes", classes, "Comma-separated class alphabet (default IPH,IVH,SDH,EDH,SAH)");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Generate a synthetic detector corpus");
    cli::SimulateOptions sim_opt;
    std::string sim_out, sim_truth;
    std::vector<std::string> sim_priors;
    sim->add_option("--seed", sim_opt.config.seed, "RNG seed");
    sim->add_option("--n", sim_opt.config.n_samples, "Number of slices");
    sim->add_option("--width", sim_opt.config.image_width, "Image width in pixels");
    sim->add_option("--height", sim_opt.config.image_height, "Image height in pixels");
    sim->add_option("--prior", sim_priors, "Class prior as CLASS=P (repeatable)");
    sim->add_option("--noise", sim_opt.config.confidence_noise, "Logit-space confidence noise");
    sim->add_option("--ambiguity", sim_opt.config.ambiguity_rate, "Probability of an ambiguous slice");
    sim->add_option("--clutter", sim_opt.config.clutter_rate, "Expected spurious boxes per slice");
    sim->add_option("--slices-per-patient", sim_opt.config.slices_per_patient, "Slices per synthetic patient");
    sim->add_option("--out", sim_out, "Dataset JSONL path");
    sim->add_option("--truth-out", sim_truth, "Generator truth JSONL path (default <out>.truth.jsonl)");

    // split
    auto* spl = app.add_subcommand("split", "Partition by reader concordance and split by group");
    cli::SplitOptions split_opt;
    std::string split_out, fractions_text = "0.7,0.1,0.1,0.1";
    spl->add_option("--in", split_opt.in, "Dataset JSONL")->required();
    spl->add_option("--out-dir", split_out, "Output directory");
    spl->add_option("--fractions", fractions_text, "training,tuning,calibration,test fractions");
    spl->add_option("--seed", split_opt.seed, "Tie-break seed");
    spl->add_flag("--include-negative", split_opt.include_negative, "Also split reader-negative slices");

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "Build the Mondrian calibration model");
    cli::CalibrateOptions cal_opt;
    std::string cal_out;
    cal->add_option("--in", cal_opt.in, "Calibration dataset JSONL")->required();
    cal->add_option("--out", cal_out, "Model JSON path");
    cal->add_option("--timestamp", cal_opt.timestamp, "created_at value (default: now, UTC)");

    // predict
    auto* pred = app.add_subcommand("predict", "Cluster detections and build prediction sets");
    cli::PredictOptions pred_opt;
    std::string pred_out;
    pred->add_option("--in", pred_opt.in, "Dataset JSONL")->required();
    pred->add_option("--model", pred_opt.model, "Model JSON")->required();
    pred->add_option("--iou-threshold", pred_opt.iou_threshold, "Clustering IoU threshold")
        ->check(CLI::Range(0.0, 1.0));
    pred->add_option("--conformal-threshold", pred_opt.conformal_threshold, "Conformal score threshold")
        ->check(CLI::Range(0.0, 1.0));
    pred->add_flag("--cross-cluster", pred_opt.cross_cluster, "Flag multi-presence across clusters too");
    pred->add_option("--out", pred_out, "Results JSONL path");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Score results against ground truth");
    cli::EvaluateOptions ev_opt;
    std::string ev_json, ev_csv, ev_model, ev_truth, ev_regimes;
    ev->add_option("--results", ev_opt.results, "Results JSONL")->required();
    ev->add_option("--dataset", ev_opt.dataset, "Dataset JSONL with ground truth")->required();
    ev->add_option("--model", ev_model, "Model JSON (alphabet and provenance)");
    ev->add_option("--generator-truth", ev_truth, "Simulator ambiguity sidecar");
    ev->add_option("--regimes", ev_regimes, "Comma-separated regimes (default all)");
    ev->add_option("--map-iou", ev_opt.map_iou, "Match IoU for mAP")->check(CLI::Range(0.0, 1.0));
    ev->add_option("--out", ev_json, "Report JSON path");
    ev->add_option("--csv", ev_csv, "Report CSV path");

    // optimize
    auto* opt = app.add_subcommand("optimize", "Sweep the threshold grid and select operating points");
    cli::OptimizeOptions opt_opt;
    std::string opt_csv, opt_json, opt_regimes, iou_values, conformal_values;
    opt->add_option("--in", opt_opt.in, "Dataset JSONL with ground truth")->required();
    opt->add_option("--model", opt_opt.model, "Model JSON")->required();
    opt->add_option("--iou-values", iou_values, "Comma-separated IoU grid (default 0:0.05:1)");
    opt->add_option("--conformal-values", conformal_values, "Comma-separated conformal grid (default 0:0.05:1)");
    opt->add_option("--regimes", opt_regimes, "Comma-separated regimes (default all)");
    opt->add_option("--threads", opt_opt.threads, "Worker threads")->check(CLI::PositiveNumber);
    opt->add_flag("--cross-cluster", opt_opt.cross_cluster, "Flag multi-presence across clusters too");
    opt->add_option("--out", opt_csv, "Grid CSV path");
    opt->add_option("--selections", opt_json, "Selections JSON path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);
        }
        std::cerr << io::json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump() << "\n";
        return 2;
    }

    try {
        const Alphabet alphabet = parse_alphabet(classes);
        if (*sim) {
            sim_opt.config.alphabet = alphabet;
            for (const auto& p : sim_priors) {
                if (sim_opt.config.class_priors.empty()) {
                    sim_opt.config.class_priors = SimConfig::default_priors(alphabet);
                }
                const auto eq = p.find('=');
                if (eq == std::string::npos) {
                    throw Error(ErrorKind::InvalidInput, "prior must be CLASS=P, got '" + p + "'");
                }
                const auto values = parse_numbers(p.substr(eq + 1), "--prior");
                if (values.size() != 1) throw Error(ErrorKind::InvalidInput, "prior must be CLASS=P");
                sim_opt.config.class_priors[alphabet.label(p.substr(0, eq)).index] = values.front();
            }
            sim_opt.out = or_default(sim_out, "simulated.jsonl");
            sim_opt.truth_out = sim_truth;
            cli::cmd_simulate(sim_opt);
        } else if (*spl) {
            split_opt.alphabet = alphabet;
            const auto f = parse_numbers(fractions_text, "--fractions");
            if (f.size() != 4) throw Error(ErrorKind::InvalidInput, "--fractions needs four values");
            std::copy(f.begin(), f.end(), split_opt.fractions.begin());
            split_opt.out_dir = split_out.empty() ? cli::default_output(".") : fs::path(split_out);
            cli::cmd_split(split_opt);
        } else if (*cal) {
            cal_opt.alphabet = alphabet;
            cal_opt.out = or_default(cal_out, "model.json");
            cli::cmd_calibrate(cal_opt);
        } else if (*pred) {
            pred_opt.out = or_default(pred_out, "results.jsonl");
            cli::cmd_predict(pred_opt);
        } else if (*ev) {
            ev_opt.alphabet = alphabet;
            if (!ev_model.empty()) ev_opt.model = ev_model;
            if (!ev_truth.empty()) ev_opt.generator_truth = ev_truth;
            if (!ev_regimes.empty()) ev_opt.regimes = parse_regimes(ev_regimes);
            ev_opt.out_json = or_default(ev_json, "report.json");
            ev_opt.out_csv = or_default(ev_csv, "report.csv");
            cli::cmd_evaluate(ev_opt);
        } else if (*opt) {
            if (!iou_values.empty()) opt_opt.grid.iou_values = parse_numbers(iou_values, "--iou-values");
            if (!conformal_values.empty()) {
                opt_opt.grid.conformal_values = parse_numbers(conformal_values, "--conformal-values");
            }
            if (!opt_regimes.empty()) opt_opt.regimes = parse_regimes(opt_regimes);
            opt_opt.out_csv = or_default(opt_csv, "grid.csv");
            opt_opt.out_json = or_default(opt_json, "selections.json");
            cli::cmd_optimize(opt_opt);
        }
    } catch (const std::exception& e) {
        std::cerr << io::error_record(e).dump() << "\n";
        return 1;
    }
    return 0;
}
