#pragma once

// On-disk formats: JSONL datasets and results, the model document, the flat
// grid CSV, and SHA-256 content hashes for provenance.

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "mcpdet/calibration.hpp"
#include "mcpdet/core.hpp"
#include "mcpdet/inference.hpp"
#include "mcpdet/metrics.hpp"
#include "mcpdet/optimizer.hpp"

namespace mcpdet::io {

using json = nlohmann::json;

// ---- files -----------------------------------------------------------------

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
        throw Error(ErrorKind::Io, "write to '" + path.string() + "' failed");
    }
}

inline std::string sha256_hex(std::string_view data) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1) {
        throw Error(ErrorKind::Io, "SHA-256 computation failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

inline std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text(path)); }

// Shortest text that reads back to the same double.
inline std::string format_number(double v) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc{}) {
        throw Error(ErrorKind::InvalidInput, "cannot format number");
    }
    return std::string(buf.data(), end);
}

// ---- field helpers ---------------------------------------------------------

namespace detail {

inline const json& field(const json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end()) {
        throw Error(ErrorKind::Parse, std::string("missing field '") + name + "'");
    }
    return *it;
}

inline std::string string_field(const json& j, const char* name) {
    const auto& v = field(j, name);
    if (!v.is_string()) throw Error(ErrorKind::Parse, std::string("field '") + name + "' must be a string");
    return v.get<std::string>();
}

inline std::string optional_string(const json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end() || it->is_null()) return {};
    if (!it->is_string()) throw Error(ErrorKind::Parse, std::string("field '") + name + "' must be a string");
    return it->get<std::string>();
}

inline double number(const json& v, const char* what) {
    if (!v.is_number()) throw Error(ErrorKind::Parse, std::string(what) + " must be a number");
    return v.get<double>();
}

inline const json& array_field(const json& j, const char* name) {
    const auto& v = field(j, name);
    if (!v.is_array()) throw Error(ErrorKind::Parse, std::string("field '") + name + "' must be an array");
    return v;
}

inline ClassLabel class_field(const json& j, const Alphabet& alphabet) {
    return alphabet.label(string_field(j, "class"));
}

inline Polarity polarity_field(const json& j) {
    const auto s = string_field(j, "polarity");
    try {
        return parse_polarity(s);
    } catch (const Error&) {
        throw Error(ErrorKind::Parse, "unknown polarity '" + s + "'");
    }
}

} // namespace detail

inline json to_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

inline Box box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) {
        throw Error(ErrorKind::Parse, "box must be an array [x1, y1, x2, y2]");
    }
    Box b{detail::number(j[0], "box coordinate"), detail::number(j[1], "box coordinate"),
          detail::number(j[2], "box coordinate"), detail::number(j[3], "box coordinate")};
    validate(b);
    return b;
}

inline json to_json(const Detection& d, const Alphabet& alphabet) {
    return {{"class", alphabet.name(d.label)}, {"box", to_json(d.box)}, {"conf", d.confidence}};
}

inline Detection detection_from_json(const json& j, const Alphabet& alphabet) {
    if (!j.is_object()) throw Error(ErrorKind::Parse, "detection must be an object");
    return {box_from_json(detail::field(j, "box")), detail::class_field(j, alphabet),
            detail::number(detail::field(j, "conf"), "conf")};
}

// ---- dataset ---------------------------------------------------------------

inline constexpr std::string_view kKnownSampleFields[] = {"slice_id",   "series_id", "patient_id",
                                                          "detections", "truth",     "readers"};

inline json to_json(const Sample& s, const Alphabet& alphabet) {
    json j = json::object();
    for (const auto& [key, text] : s.passthrough) {
        j[key] = json::parse(text);
    }
    j["slice_id"] = s.slice_id;
    j["series_id"] = s.series_id;
    j["patient_id"] = s.patient_id;
    json dets = json::array();
    for (const auto& d : s.detections) dets.push_back(to_json(d, alphabet));
    j["detections"] = std::move(dets);
    if (s.ground_truth) {
        json truth = json::array();
        for (const auto& g : *s.ground_truth) {
            json boxes = json::array();
            for (const auto& b : g.boxes) boxes.push_back(to_json(b));
            truth.push_back({{"class", alphabet.name(g.label)},
                             {"polarity", std::string(to_string(g.polarity))},
                             {"boxes", std::move(boxes)}});
        }
        j["truth"] = std::move(truth);
    }
    if (s.readers) {
        json readers = json::array();
        for (const auto& r : *s.readers) {
            json labels = json::object();
            for (const auto& [label, pol] : r.labels) labels[alphabet.name(label)] = std::string(to_string(pol));
            readers.push_back({{"reader_id", r.reader_id}, {"labels", std::move(labels)}});
        }
        j["readers"] = std::move(readers);
    }
    return j;
}

inline Sample sample_from_json(const json& j, const Alphabet& alphabet) {
    if (!j.is_object()) throw Error(ErrorKind::Parse, "sample must be a JSON object");
    Sample s;
    s.slice_id = detail::string_field(j, "slice_id");
    s.series_id = detail::optional_string(j, "series_id");
    s.patient_id = detail::optional_string(j, "patient_id");
    for (const auto& d : detail::array_field(j, "detections")) {
        s.detections.push_back(detection_from_json(d, alphabet));
    }
    if (auto it = j.find("truth"); it != j.end() && !it->is_null()) {
        if (!it->is_array()) throw Error(ErrorKind::Parse, "field 'truth' must be an array");
        std::vector<GroundTruthLabel> truth;
        for (const auto& g : *it) {
            if (!g.is_object()) throw Error(ErrorKind::Parse, "truth entry must be an object");
            GroundTruthLabel label{detail::class_field(g, alphabet), detail::polarity_field(g), {}};
            if (auto b = g.find("boxes"); b != g.end()) {
                if (!b->is_array()) throw Error(ErrorKind::Parse, "field 'boxes' must be an array");
                for (const auto& box : *b) label.boxes.push_back(box_from_json(box));
            }
            truth.push_back(std::move(label));
        }
        s.ground_truth = std::move(truth);
    }
    if (auto it = j.find("readers"); it != j.end() && !it->is_null()) {
        if (!it->is_array()) throw Error(ErrorKind::Parse, "field 'readers' must be an array");
        std::vector<ReaderOpinion> readers;
        for (const auto& r : *it) {
            if (!r.is_object()) throw Error(ErrorKind::Parse, "reader entry must be an object");
            ReaderOpinion op{detail::string_field(r, "reader_id"), {}};
            const auto& labels = detail::field(r, "labels");
            if (!labels.is_object()) throw Error(ErrorKind::Parse, "reader labels must be an object");
            for (const auto& [name, pol] : labels.items()) {
                if (!pol.is_string()) throw Error(ErrorKind::Parse, "reader label must be a polarity string");
                op.labels[alphabet.label(name)] = parse_polarity(pol.get<std::string>());
            }
            readers.push_back(std::move(op));
        }
        s.readers = std::move(readers);
    }
    for (const auto& [key, value] : j.items()) {
        if (std::find(std::begin(kKnownSampleFields), std::end(kKnownSampleFields), key) ==
            std::end(kKnownSampleFields)) {
            s.passthrough[key] = value.dump();
        }
    }
    validate(s, alphabet);
    return s;
}

// Generic line reader: blank lines are skipped, any failure names its line.
template <typename F>
void for_each_line(std::istream& in, F&& on_line) {
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            on_line(json::parse(line));
        } catch (const json::exception& e) {
            throw Error(ErrorKind::Parse, e.what(), number);
        } catch (const Error& e) {
            throw Error(e.kind(), e.what(), number);
        }
    }
}

inline std::vector<Sample> parse_dataset(std::istream& in, const Alphabet& alphabet) {
    std::vector<Sample> out;
    for_each_line(in, [&](const json& j) { out.push_back(sample_from_json(j, alphabet)); });
    validate_unique_slice_ids(out);
    return out;
}

inline std::vector<Sample> parse_dataset(std::string_view text, const Alphabet& alphabet) {
    std::istringstream in{std::string(text)};
    return parse_dataset(in, alphabet);
}

inline std::vector<Sample> read_dataset(const std::filesystem::path& path, const Alphabet& alphabet) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open dataset '" + path.string() + "'");
    return parse_dataset(in, alphabet);
}

inline std::string format_dataset(std::span<const Sample> samples, const Alphabet& alphabet) {
    std::string out;
    for (const auto& s : samples) {
        out += to_json(s, alphabet).dump();
        out += '\n';
    }
    return out;
}

inline void write_dataset(const std::filesystem::path& path, std::span<const Sample> samples,
                          const Alphabet& alphabet) {
    write_text(path, format_dataset(samples, alphabet));
}

// ---- model -----------------------------------------------------------------

inline json to_json(const CalibrationModel& m) {
    json groups = json::array();
    for (const auto& g : m.groups()) {
        groups.push_back({{"class", m.alphabet().name(g.label)},
                          {"polarity", std::string(to_string(g.polarity))},
                          {"values", g.values}});
    }
    return {{"format_version", m.format_version()},
            {"alphabet", m.alphabet().names()},
            {"sample_count", m.sample_count()},
            {"created_at", m.created_at()},
            {"groups", std::move(groups)}};
}

inline CalibrationModel model_from_json(const json& j) {
    try {
        if (!j.is_object()) throw Error(ErrorKind::Parse, "model must be a JSON object");
        const auto& version = detail::field(j, "format_version");
        if (!version.is_number_integer()) throw Error(ErrorKind::Parse, "format_version must be an integer");
        if (version.get<long long>() != kModelFormatVersion) {
            throw Error(ErrorKind::FormatVersion, "unsupported model format_version " + version.dump() +
                                                      " (expected " + std::to_string(kModelFormatVersion) + ")");
        }
        std::vector<std::string> names;
        for (const auto& n : detail::array_field(j, "alphabet")) {
            if (!n.is_string()) throw Error(ErrorKind::Parse, "alphabet entries must be strings");
            names.push_back(n.get<std::string>());
        }
        Alphabet alphabet(std::move(names));
        std::vector<MondrianGroup> groups;
        for (const auto& g : detail::array_field(j, "groups")) {
            MondrianGroup group{detail::class_field(g, alphabet), detail::polarity_field(g), {}};
            for (const auto& v : detail::array_field(g, "values")) {
                group.values.push_back(detail::number(v, "group value"));
            }
            groups.push_back(std::move(group));
        }
        const auto& count = detail::field(j, "sample_count");
        if (!count.is_number_unsigned()) throw Error(ErrorKind::Parse, "sample_count must be a non-negative integer");
        CalibrationModel model(std::move(alphabet), std::move(groups), detail::string_field(j, "created_at"),
                               static_cast<int>(version.get<long long>()));
        if (model.sample_count() != count.get<std::size_t>()) {
            throw Error(ErrorKind::InvalidInput, "sample_count does not match the group sizes");
        }
        return model;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Parse, e.what());
    }
}

inline std::string format_model(const CalibrationModel& m) { return to_json(m).dump(2) + "\n"; }

inline CalibrationModel parse_model(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Parse, std::string("model file: ") + e.what());
    }
    return model_from_json(j);
}

inline CalibrationModel read_model(const std::filesystem::path& path) { return parse_model(read_text(path)); }

inline void write_model(const std::filesystem::path& path, const CalibrationModel& m) {
    write_text(path, format_model(m));
}

// ---- results ---------------------------------------------------------------

inline json to_json(const SampleResult& r, const Alphabet& alphabet) {
    json clusters = json::array();
    for (const auto& cl : r.clusters) {
        json members = json::array();
        for (const auto& m : cl.members) {
            if (m) members.push_back(to_json(*m, alphabet));
        }
        json set = json::array();
        for (const auto& e : cl.prediction_set) {
            set.push_back({{"class", alphabet.name(e.label)},
                           {"polarity", std::string(to_string(e.polarity))},
                           {"score", e.score},
                           {"source_confidence", e.source_confidence}});
        }
        clusters.push_back({{"delimiter", to_json(cl.delimiter, alphabet)},
                            {"members", std::move(members)},
                            {"prediction_set", std::move(set)}});
    }
    return {{"slice_id", r.slice_id},
            {"challenging", r.challenging},
            {"thresholds", {{"iou", r.thresholds.iou}, {"conformal", r.thresholds.conformal}}},
            {"clusters", std::move(clusters)}};
}

inline SampleResult result_from_json(const json& j, const Alphabet& alphabet) {
    if (!j.is_object()) throw Error(ErrorKind::Parse, "result must be a JSON object");
    SampleResult r;
    r.slice_id = detail::string_field(j, "slice_id");
    const auto& flag = detail::field(j, "challenging");
    if (!flag.is_boolean()) throw Error(ErrorKind::Parse, "field 'challenging' must be a boolean");
    r.challenging = flag.get<bool>();
    const auto& t = detail::field(j, "thresholds");
    r.thresholds = {detail::number(detail::field(t, "iou"), "iou"),
                    detail::number(detail::field(t, "conformal"), "conformal")};
    for (const auto& c : detail::array_field(j, "clusters")) {
        Cluster cl;
        cl.delimiter = detection_from_json(detail::field(c, "delimiter"), alphabet);
        cl.members.resize(alphabet.size());
        for (const auto& m : detail::array_field(c, "members")) {
            auto d = detection_from_json(m, alphabet);
            if (cl.members[d.label.index]) throw Error(ErrorKind::Parse, "cluster holds two members of one class");
            cl.members[d.label.index] = d;
        }
        for (const auto& e : detail::array_field(c, "prediction_set")) {
            cl.prediction_set.push_back({detail::class_field(e, alphabet), detail::polarity_field(e),
                                         detail::number(detail::field(e, "score"), "score"),
                                         detail::number(detail::field(e, "source_confidence"),
                                                        "source_confidence")});
        }
        r.clusters.push_back(std::move(cl));
    }
    return r;
}

inline std::string format_results(std::span<const SampleResult> results, const Alphabet& alphabet) {
    std::string out;
    for (const auto& r : results) {
        out += to_json(r, alphabet).dump();
        out += '\n';
    }
    return out;
}

inline std::vector<SampleResult> parse_results(std::istream& in, const Alphabet& alphabet) {
    std::vector<SampleResult> out;
    for_each_line(in, [&](const json& j) { out.push_back(result_from_json(j, alphabet)); });
    return out;
}

inline std::vector<SampleResult> read_results(const std::filesystem::path& path, const Alphabet& alphabet) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open results '" + path.string() + "'");
    return parse_results(in, alphabet);
}

// ---- reports ---------------------------------------------------------------

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json optional_count(const std::optional<std::uint64_t>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const EvaluationReport& r) {
    return {{"regime", std::string(to_string(r.regime))},
            {"thresholds", {{"iou", r.thresholds.iou}, {"conformal", r.thresholds.conformal}}},
            {"counts",
             {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", optional_count(r.counts.tn)},
              {"fn", optional_count(r.counts.fn)}}},
            {"metrics",
             {{"sensitivity", optional_number(r.metrics.sensitivity)},
              {"specificity", optional_number(r.metrics.specificity)},
              {"ppv", optional_number(r.metrics.ppv)},
              {"npv", optional_number(r.metrics.npv)},
              {"f1", optional_number(r.metrics.f1)}}}};
}

inline constexpr std::string_view kCsvHeader =
    "regime,iou_threshold,conformal_threshold,tp,fp,tn,fn,sensitivity,specificity,ppv,npv,f1";

namespace detail {
inline void csv_cell(std::string& out, const std::optional<double>& v) {
    out += ',';
    if (v) out += format_number(*v);
}
inline void csv_cell(std::string& out, const std::optional<std::uint64_t>& v) {
    out += ',';
    if (v) out += std::to_string(*v);
}
} // namespace detail

// One row per report; undefined counts and rates are left empty.
inline std::string csv_row(const EvaluationReport& r) {
    std::string row(to_string(r.regime));
    row += ',' + format_number(r.thresholds.iou) + ',' + format_number(r.thresholds.conformal);
    row += ',' + std::to_string(r.counts.tp) + ',' + std::to_string(r.counts.fp);
    detail::csv_cell(row, r.counts.tn);
    detail::csv_cell(row, r.counts.fn);
    detail::csv_cell(row, r.metrics.sensitivity);
    detail::csv_cell(row, r.metrics.specificity);
    detail::csv_cell(row, r.metrics.ppv);
    detail::csv_cell(row, r.metrics.npv);
    detail::csv_cell(row, r.metrics.f1);
    return row;
}

// Regime-major, then cells in sweep order.
inline std::string format_grid_csv(std::span<const GridCell> cells, std::span<const Regime> regimes) {
    std::string out(kCsvHeader);
    out += '\n';
    for (Regime reg : regimes) {
        for (const auto& c : cells) {
            auto it = c.reports.find(reg);
            if (it == c.reports.end()) continue;
            out += csv_row(it->second);
            out += '\n';
        }
    }
    return out;
}

// ---- error record ----------------------------------------------------------

inline json error_record(const std::exception& e) {
    json err = {{"message", e.what()}};
    if (const auto* me = dynamic_cast<const Error*>(&e)) {
        err["kind"] = std::string(to_string(me->kind()));
        if (me->line()) err["line"] = *me->line();
    } else {
        err["kind"] = "internal";
    }
    return {{"error", std::move(err)}};
}

} // namespace mcpdet::io
