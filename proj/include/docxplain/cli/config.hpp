#pragma once

// Run configuration (JSON), model spec strings and corpus manifests.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "docxplain/attribution.hpp"
#include "docxplain/error.hpp"
#include "docxplain/metrics.hpp"
#include "docxplain/model.hpp"
#include "docxplain/segmentation.hpp"

namespace docxplain::cli {

using Json = nlohmann::json;

/// Invalid command line or configuration; maps to exit code 1.
class UsageError : public Error {
public:
    using Error::Error;
};

enum class ModeSelection { fg, fgbg, both };

inline ModeSelection parse_mode(const std::string& s) {
    if (s == "fg") return ModeSelection::fg;
    if (s == "fgbg") return ModeSelection::fgbg;
    if (s == "both") return ModeSelection::both;
    throw UsageError("mode must be one of fg, fgbg, both (got '" + s + "')");
}

inline std::string to_string(ModeSelection m) {
    switch (m) {
    case ModeSelection::fg: return "fg";
    case ModeSelection::fgbg: return "fgbg";
    case ModeSelection::both: return "both";
    }
    return "both";
}

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> names{"docxplain_fg", "docxplain_fgbg", "occlusion", "random"};
    return names;
}

struct RunConfig {
    std::string model = "region_density:56,56,112,112";
    InputShape input{};
    /// Subprocess backends only; 0 asks the model.
    std::size_t n_classes = 0;
    std::size_t max_batch = 32;

    SegmentationConfig segmentation{};
    ModeSelection mode = ModeSelection::both;
    std::optional<std::uint32_t> target_class;
    std::vector<std::string> methods = known_methods();

    OcclusionParams occlusion{};
    AopcParams aopc{};
    SensitivityParams sensitivity{};
    bool sensitivity_enabled = true;
    InfidelityParams infidelity{};

    std::uint64_t seed = 0;
    std::string out = "docxplain_out";
    int workers = 1;
    bool write_heatmaps = true;

    void validate() const {
        if (input.width < 1 || input.height < 1 || (input.channels != 1 && input.channels != 3))
            throw UsageError("input shape must be positive with 1 or 3 channels");
        if (max_batch < 1) throw UsageError("max_batch must be >= 1");
        if (workers < 1) throw UsageError("workers must be >= 1");
        if (methods.empty()) throw UsageError("at least one method is required");
        for (const auto& m : methods)
            if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
                throw UsageError("unknown method '" + m + "'");
        try {
            segmentation.validate();
            occlusion.validate();
            aopc.validate();
            sensitivity.validate();
            infidelity.validate();
        } catch (const ArgumentError& e) {
            throw UsageError(e.what());
        }
    }
};

namespace detail {

inline void reject_unknown(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw UsageError(where + ": expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!ok.count(it.key())) throw UsageError(where + ": unknown key '" + it.key() + "'");
}

template <typename T>
void read_opt(const Json& j, const char* key, T& dst, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        dst = j.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw UsageError(where + "." + key + ": " + e.what());
    }
}

inline StructuringElement read_kernel(const Json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 2) throw UsageError(where + ": expected [kx, ky]");
    return {j[0].get<int>(), j[1].get<int>()};
}

inline Json kernel_json(const StructuringElement& k) { return Json::array({k.kx, k.ky}); }

} // namespace detail

inline Json to_json(const RunConfig& c) {
    Json kernels = Json::array();
    for (const auto& k : c.segmentation.kernels)
        kernels.push_back({{"fg_kernel", detail::kernel_json(k.fg_kernel)},
                           {"patch", Json::array({k.patch_x, k.patch_y})},
                           {"expansion", k.expansion},
                           {"min_area", k.min_area},
                           {"slic",
                            {{"n_segments", k.slic.n_segments},
                             {"compactness", k.slic.compactness},
                             {"area_fraction_trigger", k.slic.area_fraction_trigger},
                             {"iterations", k.slic.iterations}}}});
    Json j;
    j["model"] = c.model;
    j["input"] = {{"width", c.input.width}, {"height", c.input.height}, {"channels", c.input.channels}};
    j["n_classes"] = c.n_classes;
    j["max_batch"] = c.max_batch;
    j["segmentation"] = {{"working_size", c.segmentation.working_size},
                         {"open_kernel", detail::kernel_json(c.segmentation.open_kernel)},
                         {"kernels", kernels}};
    j["mode"] = to_string(c.mode);
    j["target_class"] = c.target_class ? Json(*c.target_class) : Json(nullptr);
    j["methods"] = c.methods;
    j["occlusion"] = {{"patch", c.occlusion.patch}, {"stride", c.occlusion.stride}, {"fill", c.occlusion.fill}};
    j["aopc"] = {{"patch", c.aopc.patch}, {"steps", c.aopc.steps}};
    j["sensitivity"] = {
        {"enabled", c.sensitivity_enabled}, {"radius", c.sensitivity.radius}, {"samples", c.sensitivity.n_samples}};
    j["infidelity"] = {{"patch", c.infidelity.patch}, {"samples", c.infidelity.n_samples}};
    j["seed"] = c.seed;
    j["out"] = c.out;
    j["workers"] = c.workers;
    j["write_heatmaps"] = c.write_heatmaps;
    return j;
}

/// Missing keys keep their defaults; unknown keys are errors.
inline RunConfig config_from_json(const Json& j) {
    using detail::read_opt;
    detail::reject_unknown(j,
                           {"model", "input", "n_classes", "max_batch", "segmentation", "mode", "target_class",
                            "methods", "occlusion", "aopc", "sensitivity", "infidelity", "seed", "out", "workers",
                            "write_heatmaps"},
                           "config");
    RunConfig c;
    read_opt(j, "model", c.model, "config");
    if (j.contains("input")) {
        const auto& in = j["input"];
        detail::reject_unknown(in, {"width", "height", "channels"}, "input");
        read_opt(in, "width", c.input.width, "input");
        read_opt(in, "height", c.input.height, "input");
        read_opt(in, "channels", c.input.channels, "input");
    }
    read_opt(j, "n_classes", c.n_classes, "config");
    read_opt(j, "max_batch", c.max_batch, "config");
    if (j.contains("segmentation")) {
        const auto& s = j["segmentation"];
        detail::reject_unknown(s, {"working_size", "open_kernel", "kernels"}, "segmentation");
        read_opt(s, "working_size", c.segmentation.working_size, "segmentation");
        if (s.contains("open_kernel")) c.segmentation.open_kernel = detail::read_kernel(s["open_kernel"], "open_kernel");
        if (s.contains("kernels")) {
            if (!s["kernels"].is_array()) throw UsageError("segmentation.kernels: expected an array");
            c.segmentation.kernels.clear();
            for (const auto& kj : s["kernels"]) {
                detail::reject_unknown(kj, {"fg_kernel", "patch", "expansion", "min_area", "slic"}, "kernel");
                KernelConfig k;
                if (kj.contains("fg_kernel")) k.fg_kernel = detail::read_kernel(kj["fg_kernel"], "fg_kernel");
                if (kj.contains("patch")) {
                    const auto p = detail::read_kernel(kj["patch"], "patch");
                    k.patch_x = p.kx;
                    k.patch_y = p.ky;
                }
                read_opt(kj, "expansion", k.expansion, "kernel");
                read_opt(kj, "min_area", k.min_area, "kernel");
                if (kj.contains("slic")) {
                    const auto& sj = kj["slic"];
                    detail::reject_unknown(sj, {"n_segments", "compactness", "area_fraction_trigger", "iterations"},
                                           "slic");
                    read_opt(sj, "n_segments", k.slic.n_segments, "slic");
                    read_opt(sj, "compactness", k.slic.compactness, "slic");
                    read_opt(sj, "area_fraction_trigger", k.slic.area_fraction_trigger, "slic");
                    read_opt(sj, "iterations", k.slic.iterations, "slic");
                }
                c.segmentation.kernels.push_back(k);
            }
        }
    }
    if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
    if (j.contains("target_class") && !j["target_class"].is_null())
        c.target_class = j["target_class"].get<std::uint32_t>();
    read_opt(j, "methods", c.methods, "config");
    if (j.contains("occlusion")) {
        const auto& o = j["occlusion"];
        detail::reject_unknown(o, {"patch", "stride", "fill"}, "occlusion");
        read_opt(o, "patch", c.occlusion.patch, "occlusion");
        read_opt(o, "stride", c.occlusion.stride, "occlusion");
        read_opt(o, "fill", c.occlusion.fill, "occlusion");
    }
    if (j.contains("aopc")) {
        const auto& a = j["aopc"];
        detail::reject_unknown(a, {"patch", "steps"}, "aopc");
        read_opt(a, "patch", c.aopc.patch, "aopc");
        read_opt(a, "steps", c.aopc.steps, "aopc");
    }
    if (j.contains("sensitivity")) {
        const auto& s = j["sensitivity"];
        detail::reject_unknown(s, {"enabled", "radius", "samples"}, "sensitivity");
        read_opt(s, "enabled", c.sensitivity_enabled, "sensitivity");
        read_opt(s, "radius", c.sensitivity.radius, "sensitivity");
        read_opt(s, "samples", c.sensitivity.n_samples, "sensitivity");
    }
    if (j.contains("infidelity")) {
        const auto& s = j["infidelity"];
        detail::reject_unknown(s, {"patch", "samples"}, "infidelity");
        read_opt(s, "patch", c.infidelity.patch, "infidelity");
        read_opt(s, "samples", c.infidelity.n_samples, "infidelity");
    }
    read_opt(j, "seed", c.seed, "config");
    read_opt(j, "out", c.out, "config");
    read_opt(j, "workers", c.workers, "config");
    read_opt(j, "write_heatmaps", c.write_heatmaps, "config");
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config " + path.string());
    Json j;
    try {
        j = Json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const Json::parse_error& e) {
        throw UsageError("config " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Model specs:
//   constant:p                      two classes (p, 1-p)
//   constant:s0,s1,...              fixed score vector
//   region_density:x,y,w,h
//   multi_region_linear:x,y,w,h,weight;x,y,w,h,weight;...
//   subprocess:<shell command>
//   onnx:<path>                     recognised, not built in this distribution

namespace detail {

inline std::vector<double> parse_numbers(const std::string& s, const std::string& spec) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("model spec '" + spec + "': bad number '" + item + "'");
        }
    }
    return out;
}

inline Rect to_rect(const std::vector<double>& v, std::size_t at, const std::string& spec) {
    for (std::size_t i = at; i < at + 4; ++i)
        if (v[i] != std::floor(v[i])) throw UsageError("model spec '" + spec + "': rectangle bounds must be integers");
    return {static_cast<int>(v[at]), static_cast<int>(v[at + 1]), static_cast<int>(v[at + 2]),
            static_cast<int>(v[at + 3])};
}

} // namespace detail

inline std::shared_ptr<Classifier> make_classifier(const RunConfig& c) {
    const std::string& spec = c.model;
    const auto colon = spec.find(':');
    if (colon == std::string::npos) throw UsageError("model spec '" + spec + "' must look like kind:params");
    const std::string kind = spec.substr(0, colon), args = spec.substr(colon + 1);
    try {
        if (kind == "constant") {
            const auto v = detail::parse_numbers(args, spec);
            if (v.size() == 1) return std::make_shared<ConstantClassifier>(c.input, v[0]);
            return std::make_shared<ConstantClassifier>(c.input, ScoreVector(v.begin(), v.end()));
        }
        if (kind == "region_density") {
            const auto v = detail::parse_numbers(args, spec);
            if (v.size() != 4) throw UsageError("region_density expects x,y,w,h");
            return make_region_density(c.input, detail::to_rect(v, 0, spec));
        }
        if (kind == "multi_region_linear") {
            std::vector<WeightedRegion> regions;
            std::stringstream ss(args);
            std::string part;
            while (std::getline(ss, part, ';')) {
                const auto v = detail::parse_numbers(part, spec);
                if (v.size() != 5) throw UsageError("multi_region_linear expects x,y,w,h,weight per region");
                regions.push_back({detail::to_rect(v, 0, spec), v[4]});
            }
            return std::make_shared<RegionLinearClassifier>(c.input, std::move(regions));
        }
        if (kind == "subprocess") {
            if (args.empty()) throw UsageError("subprocess model needs a command");
            return std::make_shared<CachingClassifier>(
                std::make_shared<SubprocessClassifier>(args, c.input, c.n_classes, c.max_batch));
        }
        if (kind == "onnx") throw UsageError("the ONNX backend is not built in this distribution; use subprocess:");
    } catch (const ArgumentError& e) {
        throw UsageError("model spec '" + spec + "': " + e.what());
    }
    throw UsageError("unknown model kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Manifest: one sample per line, "path [class]". Blank lines and lines
// starting with '#' are ignored; relative paths resolve against the
// manifest's directory.

struct ManifestEntry {
    std::filesystem::path path;
    std::optional<std::uint32_t> label;
};

inline std::vector<ManifestEntry> parse_manifest(std::istream& in, const std::filesystem::path& base) {
    std::vector<ManifestEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string path;
        if (!(ls >> path) || path[0] == '#') continue;
        ManifestEntry e;
        e.path = std::filesystem::path(path).is_absolute() ? std::filesystem::path(path) : base / path;
        std::string label, extra;
        if (ls >> label) {
            try {
                std::size_t used = 0;
                const long v = std::stol(label, &used);
                if (used != label.size() || v < 0) throw std::invalid_argument(label);
                e.label = static_cast<std::uint32_t>(v);
            } catch (const std::exception&) {
                throw UsageError("manifest line " + std::to_string(lineno) + ": bad class index '" + label + "'");
            }
            if (ls >> extra) throw UsageError("manifest line " + std::to_string(lineno) + ": trailing fields");
        }
        out.push_back(std::move(e));
    }
    return out;
}

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open manifest " + path.string());
    auto entries = parse_manifest(in, path.parent_path());
    if (entries.empty()) throw UsageError("manifest " + path.string() + " lists no samples");
    return entries;
}

} // namespace docxplain::cli
