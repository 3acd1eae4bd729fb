#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "docxplain/cli/runner.hpp"

namespace {

using namespace docxplain;
using namespace docxplain::cli;

struct Overrides {
    std::string config;
    std::string model;
    std::string mode;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<std::uint32_t> target_class;
    std::optional<int> workers;
    std::vector<std::string> methods;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "JSON run configuration");
    cmd->add_option("--model", o.model, "model spec, e.g. region_density:56,56,112,112 or subprocess:<cmd>");
    cmd->add_option("--mode", o.mode, "attribution mode")->check(CLI::IsMember({"fg", "fgbg", "both"}));
    cmd->add_option("--seed", o.seed, "run seed");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--target-class", o.target_class, "explain this class instead of the prediction");
    cmd->add_option("--workers", o.workers, "corpus worker threads");
}

RunConfig resolve_config(const Overrides& o) {
    RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
    if (!o.model.empty()) cfg.model = o.model;
    if (!o.mode.empty()) cfg.mode = parse_mode(o.mode);
    if (o.seed) cfg.seed = *o.seed;
    if (!o.out.empty()) cfg.out = o.out;
    if (o.target_class) cfg.target_class = o.target_class;
    if (o.workers) cfg.workers = *o.workers;
    if (!o.methods.empty()) cfg.methods = o.methods;
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Structure-aware ablation attributions for document image classifiers"};
    app.require_subcommand(1);

    Overrides o;
    std::string input;
    auto* segment = app.add_subcommand("segment", "write one mask per kernel for a page");
    segment->add_option("image", input, "page image (PNG, PGM, PPM)")->required();
    add_common(segment, o);

    auto* explain = app.add_subcommand("explain", "attribute a page's prediction");
    explain->add_option("image", input, "page image (PNG, PGM, PPM)")->required();
    add_common(explain, o);

    auto* evaluate = app.add_subcommand("evaluate", "metric report for a corpus");
    evaluate->add_option("manifest", input, "manifest file: one 'path [class]' per line")->required();
    add_common(evaluate, o);

    auto* compare = app.add_subcommand("compare", "compare attribution methods on a corpus");
    compare->add_option("manifest", input, "manifest file: one 'path [class]' per line")->required();
    compare->add_option("--methods", o.methods, "docxplain_fg, docxplain_fgbg, occlusion, random")
        ->delimiter(',')
        ->check(CLI::IsMember(known_methods()));
    add_common(compare, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        const RunConfig cfg = resolve_config(o);
        if (segment->parsed()) return run_segment(cfg, input);
        if (explain->parsed()) return run_explain(cfg, input);
        if (evaluate->parsed()) return run_evaluate(cfg, input);
        return run_compare(cfg, input);
    } catch (const ProtocolError& e) {
        logger()->error("model protocol error at reply byte {}: {}", e.offset(), e.what());
        return kProtocol;
    } catch (const BackendError& e) {
        logger()->error("model backend: {}", e.what());
        return kProtocol;
    } catch (const std::exception& e) {
        logger()->error("{}", e.what());
        return kUsage;
    }
}
