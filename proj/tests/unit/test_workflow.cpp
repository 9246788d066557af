#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "doctest.h"
#include "taco/io.hpp"
#include "taco/workflow.hpp"

using namespace taco;
using namespace taco::workflow;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::string& text) {
    try {
        parse_config(text, "cfg.json");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

const char* kTinyConfig = R"({
  "dataset": {"positions": 3, "views": 6, "image_size": 64, "texture_size": 16,
              "procedural_textures": 4, "seed": 21},
  "enhancer": {"epochs": 1, "batch": 4},
  "detector": {"epochs": 1, "channels": [4, 6, 6, 8], "head_hidden": 8},
  "optimize": {"epochs": 1, "batch": 4, "snapshot_every": 2},
  "evaluate": {"gammas": [0.1], "inits": ["zeros"], "schemes": ["cls"], "saliency_images": 1,
               "saliency_granularity": 4}
}
)";

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

struct Scratch {
    fs::path root;
    explicit Scratch(const std::string& name) : root(fs::temp_directory_path() / name) { fs::remove_all(root); }
    ~Scratch() { fs::remove_all(root); }
};

int run_cli(const std::string& args) {
    const std::string cmd = std::string(TACO_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void build_workspace(const Workspace& ws, const ToolConfig& cfg) {
    gen_dataset(ws, cfg);
    train_enhancer(ws, cfg, false);
    train_detector(ws, cfg, false);
    optimize(ws, cfg, "default");
}

}  // namespace

TEST_CASE("config errors carry line numbers") {
    CHECK(error_of("{\n  \"dataset\": {\n    \"views\": 3,\n  }\n}").find("cfg.json:4") == 0);
    const std::string unknown = error_of("{\n  \"dataset\": {\n    \"views\": 3,\n    \"veiws\": 4\n  }\n}");
    CHECK(unknown.find("cfg.json:4") == 0);
    CHECK(unknown.find("veiws") != std::string::npos);
    CHECK(error_of("{\"datset\": {}}").find("unknown section 'datset'") != std::string::npos);
    CHECK(error_of("{\"dataset\": {\"views\": \"many\"}}").find("wrong type") != std::string::npos);
    CHECK(error_of("{\"optimize\": {\"init\": \"gray\"}}") != "");
    CHECK(error_of("{}").empty());
    CHECK_THROWS_AS(load_config("/nonexistent/taco.json"), ConfigError);
}

TEST_CASE("config emit and parse are inverse") {
    const ToolConfig d{};
    const auto j = to_json(d);
    CHECK(to_json(parse_config(j.dump(2))) == j);
    const ToolConfig t = parse_config(kTinyConfig);
    CHECK(t.dataset.views == 6);
    CHECK(t.detector.model.image_size == 64);
    CHECK(t.detector.model.channels == std::array<int, 4>{4, 6, 6, 8});
    CHECK(t.experiments.inits == std::vector<optim::InitStrategy>{optim::InitStrategy::zeros});
    CHECK(to_json(parse_config(to_json(t).dump())) == to_json(t));
}

TEST_CASE("stages refuse to run without their inputs") {
    Scratch s("taco_wf_missing");
    const Workspace ws{s.root};
    const ToolConfig cfg = parse_config(kTinyConfig);
    CHECK_THROWS_AS(train_enhancer(ws, cfg, false), ConfigError);
    CHECK_THROWS_AS(train_detector(ws, cfg, false), ConfigError);
    CHECK_THROWS_AS(optimize(ws, cfg, "default"), ConfigError);
    CHECK_THROWS_AS(evaluate(ws, cfg, {}), ConfigError);
}

TEST_CASE("command line exit codes") {
    Scratch s("taco_cli_codes");
    fs::create_directories(s.root);
    const fs::path bad = s.root / "bad.json";
    io::write_text_file(bad, "{\"dataset\": {\"views\": 0}}");
    const fs::path tiny = s.root / "tiny.json";
    io::write_text_file(tiny, kTinyConfig);
    const std::string ws = (s.root / "ws").string();

    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("gen-dataset --config " + bad.string() + " --out-dir " + ws) == 2);
    CHECK(run_cli("train-enhancer --config " + tiny.string() + " --out-dir " + ws) == 2);
    CHECK(run_cli("train-detector --resume --config " + tiny.string() + " --out-dir " + ws) == 2);
    CHECK(run_cli("gen-dataset -q --config " + tiny.string() + " --out-dir " + ws) == 0);
    CHECK(fs::exists(fs::path(ws) / "workspace.json"));
    CHECK(run_cli("optimize --config " + tiny.string() + " --out-dir " + ws) == 2);
}

TEST_CASE("a tiny workspace is reproducible end to end") {
    Scratch s("taco_wf_e2e");
    ToolConfig cfg = parse_config(kTinyConfig);
    cfg.optimize.deterministic = true;
    const Workspace a{s.root / "a"}, b{s.root / "b"};
    build_workspace(a, cfg);
    build_workspace(b, cfg);
    for (const char* f : {"texture.tnsr", "log.csv", "run.json"})
        CHECK(slurp(a.run("default") / f) == slurp(b.run("default") / f));
    CHECK(slurp(a.checkpoints() / "detector.json") == slurp(b.checkpoints() / "detector.json"));
    CHECK(fs::exists(a.run("default") / "snapshot_grid.ppm"));

    // resuming from the last epoch reproduces the finished run
    train_enhancer(b, cfg, true);
    CHECK(slurp(a.checkpoints() / "enhancer.json") == slurp(b.checkpoints() / "enhancer.json"));

    const auto log = slurp(a.run("default") / "log.csv");
    CHECK(log.rfind("step,l_cls,l_iou,l_atk,l_smooth,l_total,tex_min,tex_max\n", 0) == 0);

    // an external dump scores like the built-in path when it holds the same detections
    EvaluateOptions opts;
    opts.textures.emplace_back("again", a.run("default") / "texture.tnsr");
    opts.saliency = true;
    opts.gamma_sweep = true;
    const auto report = evaluate(a, cfg, opts);
    REQUIRE(report.textures.size() == 5);
    CHECK(report.textures[3].name == "adversarial");
    CHECK(report.textures[4].ap == report.textures[3].ap);
    REQUIRE(report.gamma.size() == 1);
    CHECK(report.gamma[0].ap == report.textures[3].ap);
    CHECK(fs::exists(a.reports() / "textures.csv"));
    CHECK(fs::exists(a.reports() / "gamma_sweep.csv"));
    CHECK(fs::exists(a.reports() / "saliency.csv"));

    opts = {};
    opts.external_dump = a.reports() / "dumps" / "adversarial.txt";
    const auto ext = evaluate(a, cfg, opts);
    REQUIRE(ext.external.has_value());
    CHECK(ext.external->ap == doctest::Approx(report.textures[3].ap).epsilon(1e-6));

    const auto manifest = refresh_manifest(a);
    CHECK(manifest.at("tool_version") == tool_version());
    CHECK(manifest.at("paths").at("runs").contains("default"));
}
