#pragma once

// Command implementations behind the `docxplain` tool: segment, explain,
// evaluate and compare. Each returns a process exit code.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "docxplain/attribution.hpp"
#include "docxplain/cli/config.hpp"
#include "docxplain/image_io.hpp"
#include "docxplain/metrics.hpp"
#include "docxplain/model.hpp"
#include "docxplain/random.hpp"
#include "docxplain/segmentation.hpp"

namespace docxplain::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kProtocol = 2, kPartialFailure = 3 };

/// Share of failed samples above which a corpus run reports kPartialFailure.
inline constexpr double kMaxFailureFraction = 0.10;

// ---------------------------------------------------------------------------
// Logging. DOCXPLAIN_LOG selects the level (trace, debug, info, warn, error,
// critical, off); the default is warn.

inline std::shared_ptr<spdlog::logger> logger() {
    static const auto log = [] {
        auto l = spdlog::stderr_color_mt("docxplain");
        l->set_pattern("[%l] %v");
        auto level = spdlog::level::warn;
        if (const char* env = std::getenv("DOCXPLAIN_LOG"); env && *env) {
            level = spdlog::level::from_str(env);
            // from_str maps unknown names to off; treat those as the default instead.
            if (level == spdlog::level::off && std::string(env) != "off") level = spdlog::level::warn;
        }
        l->set_level(level);
        return l;
    }();
    return log;
}

// ---------------------------------------------------------------------------
// Output layout: <out>/{config.json, masks/, attributions/, heatmaps/, reports/}

struct OutputLayout {
    std::filesystem::path root;

    [[nodiscard]] std::filesystem::path masks() const { return root / "masks"; }
    [[nodiscard]] std::filesystem::path attributions() const { return root / "attributions"; }
    [[nodiscard]] std::filesystem::path heatmaps() const { return root / "heatmaps"; }
    [[nodiscard]] std::filesystem::path reports() const { return root / "reports"; }

    void create() const {
        for (const auto& d : {root, masks(), attributions(), heatmaps(), reports()}) std::filesystem::create_directories(d);
    }
};

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    binio::write_file_atomic(path, std::string_view(text));
}

inline void write_config_snapshot(const OutputLayout& out, const RunConfig& cfg) {
    write_text_atomic(out.root / "config.json", to_json(cfg).dump(2) + "\n");
}

/// Shortest round-trip decimal form, so reports are byte-stable.
inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string kernel_tag(std::size_t index, const KernelConfig& k) {
    return "k" + std::to_string(index) + "_" + std::to_string(k.fg_kernel.kx) + "x" + std::to_string(k.fg_kernel.ky);
}

// ---------------------------------------------------------------------------
// Attribution methods by name.

inline bool is_docxplain(const std::string& method) { return method.rfind("docxplain_", 0) == 0; }

inline AttributionMode docxplain_mode(const std::string& method) {
    return method == "docxplain_fg" ? AttributionMode::foreground : AttributionMode::foreground_background;
}

/// Random maps depend only on the sample seed, never on the image.
inline std::uint64_t random_method_seed(std::uint64_t sample_seed) { return derive_seed(sample_seed, 3); }

/// The method as a function of the model-resolution image alone (masks are
/// rebuilt from that image); used for sensitivity.
inline AttributionMethod method_function(const std::string& method, const RunConfig& cfg, std::uint64_t sample_seed) {
    if (is_docxplain(method)) {
        const auto mode = docxplain_mode(method);
        return [&cfg, mode](Classifier& f, const RasterImage& x, std::uint32_t t) {
            const auto masks = build_masks(x, cfg.segmentation, x.width, x.height);
            return attribute(f, x, masks, t, mode);
        };
    }
    if (method == "occlusion")
        return [&cfg](Classifier& f, const RasterImage& x, std::uint32_t t) { return occlusion(f, x, t, cfg.occlusion); };
    return [sample_seed](Classifier&, const RasterImage& x, std::uint32_t t) {
        return random_baseline(x.width, x.height, random_method_seed(sample_seed), t);
    };
}

// ---------------------------------------------------------------------------
// Per-sample corpus processing.

struct MethodResult {
    std::string method;
    MetricReport metrics;
    PerturbationCurve morf;
    PerturbationCurve lerf;
};

enum class SampleStatus { ok, skipped, failed };

inline const char* to_string(SampleStatus s) {
    switch (s) {
    case SampleStatus::ok: return "ok";
    case SampleStatus::skipped: return "skipped";
    case SampleStatus::failed: return "failed";
    }
    return "failed";
}

struct SampleResult {
    std::size_t index = 0;
    std::string path;
    std::string stem;
    SampleStatus status = SampleStatus::failed;
    std::string message;
    std::optional<std::uint32_t> label;
    std::uint32_t predicted = 0;
    std::uint32_t target = 0;
    std::vector<MethodResult> methods;
};

inline std::string sample_stem(std::size_t index, const std::filesystem::path& path) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu_", index);
    return buf + path.stem().string();
}

inline SampleResult process_sample(Classifier& f, const RunConfig& cfg, const ManifestEntry& entry, std::size_t index,
                                   const std::vector<std::string>& methods, const OutputLayout& out) {
    SampleResult r;
    r.index = index;
    r.path = entry.path.lexically_normal().string();
    r.stem = sample_stem(index, entry.path);
    r.label = entry.label;

    const auto shape = f.input_shape();
    const RasterImage page = load_page(entry.path);
    const RasterImage img = prepare_model_input(page, shape.width, shape.height, shape.channels);
    const auto scores = f.score(img);
    r.predicted = static_cast<std::uint32_t>(argmax(scores));
    if (entry.label && *entry.label >= scores.size())
        throw ArgumentError("class index " + std::to_string(*entry.label) + " out of range");
    if (entry.label && *entry.label != r.predicted) {
        r.status = SampleStatus::skipped;
        r.message = "misclassified (predicted " + std::to_string(r.predicted) + ")";
        return r;
    }
    r.target = r.predicted;
    if (cfg.target_class) {
        if (*cfg.target_class >= scores.size())
            throw ArgumentError("target class " + std::to_string(*cfg.target_class) + " out of range");
        r.target = *cfg.target_class;
    }

    const std::uint64_t sample_seed = derive_seed(cfg.seed, index);
    std::vector<SegmentationMask> masks;
    if (std::any_of(methods.begin(), methods.end(), is_docxplain))
        masks = build_masks(page, cfg.segmentation, shape.width, shape.height);

    for (const auto& method : methods) {
        AttributionMap attr;
        if (is_docxplain(method))
            attr = attribute(f, img, masks, r.target, docxplain_mode(method));
        else if (method == "occlusion")
            attr = occlusion(f, img, r.target, cfg.occlusion);
        else
            attr = random_baseline(img.width, img.height, random_method_seed(sample_seed), r.target);

        save_attribution(out.attributions() / (r.stem + "." + method + ".dxam"), attr);
        if (cfg.write_heatmaps)
            write_png(out.heatmaps() / (r.stem + "." + method + ".png"), render_heatmap(attr, img));

        MethodResult m;
        m.method = method;
        m.morf = aopc(f, img, attr, r.target, Direction::morf, cfg.aopc);
        m.lerf = aopc(f, img, attr, r.target, Direction::lerf, cfg.aopc);
        m.metrics.aopc_morf = m.morf.aopc();
        m.metrics.aopc_lerf = m.lerf.aopc();
        m.metrics.abpc = abpc(m.morf, m.lerf);
        if (cfg.sensitivity_enabled) {
            SensitivityParams sp = cfg.sensitivity;
            sp.seed = derive_seed(sample_seed, 1);
            const auto s = max_sensitivity(method_function(method, cfg, sample_seed), f, img, r.target, sp);
            m.metrics.sensitivity = s.value;
            m.metrics.sensitivity_zero_denominator = s.zero_denominator;
        }
        InfidelityParams ip = cfg.infidelity;
        ip.seed = derive_seed(sample_seed, 2);
        m.metrics.infidelity = infidelity(f, img, attr, r.target, ip);
        m.metrics.continuity = continuity(attr);
        r.methods.push_back(std::move(m));
    }
    r.status = SampleStatus::ok;
    return r;
}

// ---------------------------------------------------------------------------
// Reports.

inline Json metrics_json(const MetricReport& m) {
    return {{"aopc_morf", m.aopc_morf},
            {"aopc_lerf", m.aopc_lerf},
            {"abpc", m.abpc},
            {"sensitivity", m.sensitivity},
            {"sensitivity_zero_denominator", m.sensitivity_zero_denominator},
            {"infidelity", m.infidelity},
            {"continuity", m.continuity},
            {"n_samples", m.n_samples}};
}

struct CorpusSummary {
    std::vector<SampleResult> samples;
    std::map<std::string, MetricReport> aggregate;
    std::map<std::string, std::pair<PerturbationCurve, PerturbationCurve>> curves;
    std::size_t ok = 0, skipped = 0, failed = 0;
};

inline CorpusSummary summarize(std::vector<SampleResult> samples, const std::vector<std::string>& methods) {
    CorpusSummary s;
    s.samples = std::move(samples);
    for (const auto& r : s.samples) {
        if (r.status == SampleStatus::ok) ++s.ok;
        if (r.status == SampleStatus::skipped) ++s.skipped;
        if (r.status == SampleStatus::failed) ++s.failed;
    }
    for (const auto& method : methods) {
        std::vector<MetricReport> rows;
        std::vector<PerturbationCurve> morf, lerf;
        for (const auto& r : s.samples)
            for (const auto& m : r.methods)
                if (m.method == method) {
                    rows.push_back(m.metrics);
                    morf.push_back(m.morf);
                    lerf.push_back(m.lerf);
                }
        if (rows.empty()) continue;
        s.aggregate[method] = aggregate(rows);
        s.curves[method] = {mean_curve(morf), mean_curve(lerf)};
    }
    return s;
}

inline const char* kCsvHeader =
    "index,path,status,method,target,aopc_morf,aopc_lerf,abpc,sensitivity,sensitivity_zero_denominator,infidelity,"
    "continuity\n";

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

inline std::string report_csv(const CorpusSummary& s) {
    std::string out = kCsvHeader;
    for (const auto& r : s.samples) {
        const std::string prefix = std::to_string(r.index) + "," + csv_field(r.path) + "," + to_string(r.status) + ",";
        if (r.status != SampleStatus::ok) {
            out += prefix + ",,,,,,,,\n";
            continue;
        }
        for (const auto& m : r.methods) {
            const auto& x = m.metrics;
            out += prefix + m.method + "," + std::to_string(r.target) + "," + fmt_double(x.aopc_morf) + "," +
                   fmt_double(x.aopc_lerf) + "," + fmt_double(x.abpc) + "," + fmt_double(x.sensitivity) + "," +
                   (x.sensitivity_zero_denominator ? "1" : "0") + "," + fmt_double(x.infidelity) + "," +
                   fmt_double(x.continuity) + "\n";
        }
    }
    return out;
}

inline std::string aggregate_csv(const CorpusSummary& s, const std::vector<std::string>& methods) {
    std::string out = "method,n_samples,aopc_morf,aopc_lerf,abpc,sensitivity,infidelity,continuity\n";
    for (const auto& method : methods) {
        const auto it = s.aggregate.find(method);
        if (it == s.aggregate.end()) continue;
        const auto& a = it->second;
        out += method + "," + std::to_string(a.n_samples) + "," + fmt_double(a.aopc_morf) + "," +
               fmt_double(a.aopc_lerf) + "," + fmt_double(a.abpc) + "," + fmt_double(a.sensitivity) + "," +
               fmt_double(a.infidelity) + "," + fmt_double(a.continuity) + "\n";
    }
    return out;
}

inline std::string curve_csv(const PerturbationCurve& c) {
    std::string out = "fraction,mean_drop\n";
    for (std::size_t i = 0; i < c.drops.size(); ++i) out += fmt_double(c.fractions[i]) + "," + fmt_double(c.drops[i]) + "\n";
    return out;
}

inline Json report_json(const CorpusSummary& s, const std::string& command, const std::string& model_id,
                        const std::vector<std::string>& methods) {
    Json samples = Json::array();
    for (const auto& r : s.samples) {
        Json j{{"index", r.index}, {"path", r.path}, {"status", to_string(r.status)}};
        j["label"] = r.label ? Json(*r.label) : Json(nullptr);
        if (!r.message.empty()) j["message"] = r.message;
        if (r.status != SampleStatus::failed) j["predicted"] = r.predicted;
        if (r.status == SampleStatus::ok) {
            j["target"] = r.target;
            Json per = Json::object();
            for (const auto& m : r.methods) per[m.method] = metrics_json(m.metrics);
            j["methods"] = per;
        }
        samples.push_back(std::move(j));
    }
    Json agg = Json::object();
    for (const auto& [method, a] : s.aggregate) agg[method] = metrics_json(a);
    return {{"command", command},
            {"model", model_id},
            {"methods", methods},
            {"counts", {{"total", s.samples.size()}, {"ok", s.ok}, {"skipped", s.skipped}, {"failed", s.failed}}},
            {"aggregate", agg},
            {"samples", samples}};
}

inline void write_reports(const OutputLayout& out, const CorpusSummary& s, const std::string& command,
                          const std::string& model_id, const std::vector<std::string>& methods) {
    write_text_atomic(out.reports() / "report.json", report_json(s, command, model_id, methods).dump(2) + "\n");
    write_text_atomic(out.reports() / "report.csv", report_csv(s));
    write_text_atomic(out.reports() / "aggregate.csv", aggregate_csv(s, methods));
    for (const auto& [method, c] : s.curves) {
        write_text_atomic(out.reports() / ("curves_" + method + "_morf.csv"), curve_csv(c.first));
        write_text_atomic(out.reports() / ("curves_" + method + "_lerf.csv"), curve_csv(c.second));
    }
}

inline void print_table(std::ostream& os, const CorpusSummary& s, const std::vector<std::string>& methods) {
    os << std::left << std::setw(16) << "method" << std::right << std::setw(6) << "n" << std::setw(12) << "AOPC-MoRF"
       << std::setw(12) << "AOPC-LeRF" << std::setw(12) << "ABPC" << std::setw(12) << "Sens" << std::setw(12) << "Inf"
       << std::setw(12) << "Cont" << '\n';
    os << std::setprecision(5);
    for (const auto& method : methods) {
        const auto it = s.aggregate.find(method);
        if (it == s.aggregate.end()) continue;
        const auto& a = it->second;
        os << std::left << std::setw(16) << method << std::right << std::setw(6) << a.n_samples << std::setw(12)
           << a.aopc_morf << std::setw(12) << a.aopc_lerf << std::setw(12) << a.abpc << std::setw(12) << a.sensitivity
           << std::setw(12) << a.infidelity << std::setw(12) << a.continuity << '\n';
    }
}

// ---------------------------------------------------------------------------
// Commands.

inline std::vector<std::string> methods_for_mode(ModeSelection m) {
    switch (m) {
    case ModeSelection::fg: return {"docxplain_fg"};
    case ModeSelection::fgbg: return {"docxplain_fgbg"};
    case ModeSelection::both: return {"docxplain_fg", "docxplain_fgbg"};
    }
    return {};
}

/// Runs every manifest sample through `methods` on a bounded worker pool.
/// A protocol error aborts the run; other per-sample errors are recorded and
/// the run continues.
inline int run_corpus(const RunConfig& cfg, const std::filesystem::path& manifest, const std::vector<std::string>& methods,
                      const std::string& command, std::ostream& table_out) {
    cfg.validate();
    const auto entries = load_manifest(manifest);
    auto f = make_classifier(cfg);
    const OutputLayout out{cfg.out};
    out.create();
    write_config_snapshot(out, cfg);

    std::vector<SampleResult> results(entries.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::mutex fatal_mutex;
    std::optional<ProtocolError> fatal;

    auto worker = [&] {
        for (std::size_t i = next++; i < entries.size() && !abort; i = next++) {
            auto& r = results[i];
            try {
                logger()->info("sample {} {}", i, entries[i].path.string());
                r = process_sample(*f, cfg, entries[i], i, methods, out);
                if (r.status == SampleStatus::skipped) logger()->info("sample {} skipped: {}", i, r.message);
            } catch (const ProtocolError& e) {
                std::lock_guard lock(fatal_mutex);
                if (!fatal) fatal.emplace(e);
                abort = true;
            } catch (const std::exception& e) {
                r = SampleResult{};
                r.index = i;
                r.path = entries[i].path.lexically_normal().string();
                r.label = entries[i].label;
                r.status = SampleStatus::failed;
                r.message = e.what();
                logger()->warn("sample {} ({}) failed: {}", i, r.path, e.what());
            }
        }
    };
    const int n_threads = std::min<int>(cfg.workers, static_cast<int>(entries.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    if (fatal) {
        logger()->error("model protocol error at reply byte {}: {}", fatal->offset(), fatal->what());
        return kProtocol;
    }
    const auto summary = summarize(std::move(results), methods);
    write_reports(out, summary, command, f->id(), methods);
    print_table(table_out, summary, methods);
    logger()->info("{} ok, {} skipped, {} failed", summary.ok, summary.skipped, summary.failed);
    if (static_cast<double>(summary.failed) > kMaxFailureFraction * static_cast<double>(summary.samples.size())) {
        logger()->error("{} of {} samples failed", summary.failed, summary.samples.size());
        return kPartialFailure;
    }
    return kOk;
}

inline int run_evaluate(const RunConfig& cfg, const std::filesystem::path& manifest, std::ostream& os = std::cout) {
    return run_corpus(cfg, manifest, methods_for_mode(cfg.mode), "evaluate", os);
}

inline int run_compare(const RunConfig& cfg, const std::filesystem::path& manifest, std::ostream& os = std::cout) {
    if (cfg.methods.size() < 2) throw UsageError("compare needs at least two methods");
    return run_corpus(cfg, manifest, cfg.methods, "compare", os);
}

/// One DXSM file and one color PNG per kernel, at model resolution.
inline int run_segment(const RunConfig& cfg, const std::filesystem::path& image, std::ostream& os = std::cout) {
    cfg.validate();
    const auto page = load_page(image);
    const OutputLayout out{cfg.out};
    out.create();
    write_config_snapshot(out, cfg);
    const auto masks = build_masks(page, cfg.segmentation, cfg.input.width, cfg.input.height);
    const std::string stem = image.stem().string();
    for (std::size_t k = 0; k < masks.size(); ++k) {
        const auto tag = kernel_tag(k, cfg.segmentation.kernels[k]);
        save_mask(out.masks() / (stem + "." + tag + ".dxsm"), masks[k]);
        write_png(out.masks() / (stem + "." + tag + ".png"), render_mask(masks[k]));
        os << "kernel " << cfg.segmentation.kernels[k].fg_kernel.kx << "x" << cfg.segmentation.kernels[k].fg_kernel.ky
           << ": n_bg=" << masks[k].n_bg << " n_fg=" << masks[k].n_fg << '\n';
    }
    return kOk;
}

/// DXAM attribution plus heatmap for each requested mode, and the masks used.
inline int run_explain(const RunConfig& cfg, const std::filesystem::path& image, std::ostream& os = std::cout) {
    cfg.validate();
    const auto page = load_page(image);
    auto f = make_classifier(cfg);
    const auto shape = f->input_shape();
    const auto img = prepare_model_input(page, shape.width, shape.height, shape.channels);
    std::uint32_t target = 0;
    try {
        target = resolve_target(*f, img, cfg.target_class);
    } catch (const ArgumentError& e) {
        throw UsageError(e.what());
    }
    const OutputLayout out{cfg.out};
    out.create();
    write_config_snapshot(out, cfg);
    const auto masks = build_masks(page, cfg.segmentation, shape.width, shape.height);
    const std::string stem = image.stem().string();
    for (std::size_t k = 0; k < masks.size(); ++k)
        save_mask(out.masks() / (stem + "." + kernel_tag(k, cfg.segmentation.kernels[k]) + ".dxsm"), masks[k]);
    os << "target class " << target << '\n';
    for (const auto& method : methods_for_mode(cfg.mode)) {
        const auto attr = attribute(*f, img, masks, target, docxplain_mode(method));
        const std::string name = stem + "." + to_string(attr.mode);
        save_attribution(out.attributions() / (name + ".dxam"), attr);
        write_png(out.heatmaps() / (name + ".png"), render_heatmap(attr, img));
        os << to_string(attr.mode) << ": " << (out.attributions() / (name + ".dxam")).string() << '\n';
    }
    return kOk;
}

} // namespace docxplain::cli
