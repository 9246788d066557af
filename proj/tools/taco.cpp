#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "taco/workflow.hpp"

namespace wf = taco::workflow;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3 };

struct Common {
    std::string config;
    std::string out_dir = "workspace";
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    bool deterministic = false;
    bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "JSON config file (defaults are used when omitted)");
    sub->add_option("--out-dir", c.out_dir, "workspace directory")->capture_default_str();
    sub->add_option("--seed", c.seed, "override the seed of this stage");
    sub->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--deterministic", c.deterministic, "fixed reduction order on a single thread");
    sub->add_flag("-q,--quiet", c.quiet, "suppress progress messages");
}

wf::ToolConfig resolve(const Common& c, const std::string& stage) {
    wf::ToolConfig cfg = c.config.empty() ? wf::ToolConfig{} : wf::load_config(c.config);
    if (c.threads) {
        cfg.dataset.threads = *c.threads;
        cfg.enhancer.threads = *c.threads;
        cfg.detector.threads = *c.threads;
        cfg.optimize.threads = *c.threads;
    }
    if (c.deterministic) {
        cfg.optimize.deterministic = true;
        cfg.dataset.threads = cfg.enhancer.threads = cfg.detector.threads = cfg.optimize.threads = 1;
    }
    if (c.seed) {
        if (stage == "dataset") cfg.dataset.seed = *c.seed;
        if (stage == "enhancer") cfg.enhancer.seed = *c.seed;
        if (stage == "detector") cfg.detector.seed = *c.seed;
        if (stage == "optimize" || stage == "evaluate") cfg.optimize.seed = *c.seed;
    }
    cfg.dataset.validate();
    cfg.optimize.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial camouflage texture optimization against a surrogate detector"};
    app.set_version_flag("--version", wf::tool_version());
    app.require_subcommand(1);

    Common common;
    bool resume = false;
    std::string run_name = "default";
    std::vector<std::string> textures;
    std::string dump_path;
    wf::EvaluateOptions eval_opts;
    bool all_experiments = false;

    auto* gen = app.add_subcommand("gen-dataset", "render the synthetic dataset");
    add_common(gen, common);
    auto* enh = app.add_subcommand("train-enhancer", "fit the appearance enhancer");
    add_common(enh, common);
    enh->add_flag("--resume", resume, "continue from the last epoch checkpoint");
    auto* det = app.add_subcommand("train-detector", "train the surrogate detector");
    add_common(det, common);
    det->add_flag("--resume", resume, "continue from the last epoch checkpoint");
    auto* opt = app.add_subcommand("optimize", "optimize an adversarial texture");
    add_common(opt, common);
    opt->add_option("--name", run_name, "run directory under runs/")->capture_default_str();
    auto* ev = app.add_subcommand("evaluate", "evaluate textures and run experiments");
    add_common(ev, common);
    ev->add_option("--texture", textures, "extra texture as name=path.tnsr (repeatable)");
    ev->add_flag("--gamma-sweep", eval_opts.gamma_sweep, "smoothness weight sweep");
    ev->add_flag("--init-study", eval_opts.init_study, "initialization study");
    ev->add_flag("--loss-ablation", eval_opts.loss_ablation, "attack loss ablation");
    ev->add_flag("--saliency", eval_opts.saliency, "ablation saliency overlays");
    ev->add_flag("--all", all_experiments, "every experiment above");
    ev->add_option("--dump", dump_path, "score an external detection dump against the test split");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    const wf::Log log = [&](const std::string& msg) {
        if (!common.quiet) std::cerr << msg << '\n';
    };

    try {
        const wf::Workspace ws{common.out_dir};
        if (gen->parsed()) {
            wf::gen_dataset(ws, resolve(common, "dataset"), log);
        } else if (enh->parsed()) {
            const auto r = wf::train_enhancer(ws, resolve(common, "enhancer"), resume, log);
            std::printf("enhancer held-out L1 %.6f\n", r.heldout_l1);
        } else if (det->parsed()) {
            const auto r = wf::train_detector(ws, resolve(common, "detector"), resume, log);
            std::printf("detector held-out AP@0.5 %.6f\n", r.heldout_ap);
        } else if (opt->parsed()) {
            if (run_name.empty() || run_name.find('/') != std::string::npos)
                throw taco::ConfigError("--name must be a plain directory name");
            wf::optimize(ws, resolve(common, "optimize"), run_name, log);
        } else if (ev->parsed()) {
            for (const auto& t : textures) {
                const auto eq = t.find('=');
                if (eq == std::string::npos || eq == 0) throw taco::ConfigError("--texture expects name=path, got '" + t + "'");
                eval_opts.textures.emplace_back(t.substr(0, eq), t.substr(eq + 1));
            }
            if (all_experiments)
                eval_opts.gamma_sweep = eval_opts.init_study = eval_opts.loss_ablation = eval_opts.saliency = true;
            if (!dump_path.empty()) eval_opts.external_dump = dump_path;
            const auto rep = wf::evaluate(ws, resolve(common, "evaluate"), eval_opts, log);
            if (rep.external)
                std::printf("external dump: AP@0.5 %.6f ADR %.6f\n", rep.external->ap, rep.external->adr);
        }
    } catch (const taco::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const taco::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kOk;
}
