#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "tta/cli.hpp"

using namespace tta;
using cli::RunConfig;

namespace {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name) : path(name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string sub(const std::string& name) const { return (path / name).string(); }
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

using KV = std::vector<std::pair<std::string, std::string>>;

} // namespace

TEST_CASE("the preset carries the published hyperparameters") {
    RunConfig cfg = cli::resolve_run_config({}, {});
    CHECK(cfg.preset == "vitb-paper");
    CHECK(cfg.attack.epsilon == 8.0 / 255.0);
    CHECK(cfg.attack.alpha == 1.0 / 255.0);
    CHECK(cfg.attack.steps == 100);
    CHECK(cfg.attack.topk == 5);
    CHECK(cfg.attack.tau == 5.0);
    CHECK(cfg.attack.loss_weights.lambda_anc == 1.0);
    CHECK(cfg.attack.loss_weights.lambda_feat == 1.5);
    CHECK(cfg.attack.loss_weights.lambda_cls == 1.0);
    CHECK(cfg.attack.loss_weights.lambda_spa == 0.7);
    CHECK(cfg.attack.loss_weights.lambda_mid == 2.5);
    CHECK(cfg.attack.layers == std::vector<int>{7, 9, 11});
    CHECK(cfg.surrogate.image_size == 64);
    CHECK(cfg.surrogate.depth_img == 12);
    CHECK(cfg.surrogate.vocab_size == 259);
}

TEST_CASE("config file parsing handles comments, dots, and errors") {
    TempDir dir("cli_cfg_test");
    const std::string path = dir.sub("run.cfg");
    write_text(path,
               "# a comment line\n"
               "steps = 7   # trailing comment\n"
               "loss.lambda_mid = 2.5\n"
               "\n"
               "epsilon = 8/255\n");
    auto kv = cli::parse_config_file(path);
    REQUIRE(kv.size() == 3);
    CHECK(kv[0].first == "steps");
    CHECK(kv[2].second == "8/255");

    RunConfig cfg = cli::resolve_run_config(kv, {});
    CHECK(cfg.attack.steps == 7);
    CHECK(cfg.attack.epsilon == 8.0 / 255.0);

    write_text(path, "steps 7\n");
    CHECK_THROWS_AS(cli::parse_config_file(path), ParameterError);
    CHECK_THROWS_AS(cli::parse_config_file(dir.sub("missing.cfg")), ParameterError);
}

TEST_CASE("flag > config file > preset precedence") {
    KV file = {{"steps", "5"}, {"tau", "3"}};
    KV flags = {{"steps", "3"}};
    RunConfig cfg = cli::resolve_run_config(file, flags);
    CHECK(cfg.attack.steps == 3);  // flag wins
    CHECK(cfg.attack.tau == 3.0);  // file wins over preset
    CHECK(cfg.attack.topk == 5);   // preset default
}

TEST_CASE("unknown keys and presets are rejected") {
    CHECK_THROWS_AS(cli::resolve_run_config({{"no_such_key", "1"}}, {}), ParameterError);
    CHECK_THROWS_AS(cli::resolve_run_config({}, {{"preset", "vitg-huge"}}), ParameterError);
    CHECK_THROWS_AS(cli::resolve_run_config({{"steps", "abc"}}, {}), ParameterError);
    CHECK_THROWS_AS(cli::resolve_run_config({{"jobs", "0"}}, {}), ParameterError);
    CHECK_THROWS_AS(cli::resolve_run_config({{"epsilon", "8/0"}}, {}), ParameterError);
}

TEST_CASE("echo_config reports every effective value") {
    RunConfig cfg = cli::resolve_run_config({}, {{"steps", "9"}});
    std::string echo = cli::echo_config(cfg);
    CHECK(echo.find("steps = 9") != std::string::npos);
    CHECK(echo.find("layers = 7,9,11") != std::string::npos);
    CHECK(echo.find("loss.lambda_mid = 2.5") != std::string::npos);
    CHECK(echo.find("preset = vitb-paper") != std::string::npos);
}

TEST_CASE("cmd_init_weights is deterministic and round-trips") {
    TempDir dir("cli_weights_test");
    std::ostringstream sink;

    RunConfig a = cli::resolve_run_config({}, {{"seed", "7"}});
    a.paths.weights = dir.sub("a.bin");
    CHECK(cli::cmd_init_weights(a, sink) == 0);

    RunConfig b = a;
    b.paths.weights = dir.sub("b.bin");
    CHECK(cli::cmd_init_weights(b, sink) == 0);
    CHECK(read_file_bytes(dir.sub("a.bin")) == read_file_bytes(dir.sub("b.bin")));

    SurrogateModel model = load_weights(dir.sub("a.bin"));
    CHECK(model.config.seed == 7);
    CHECK(model.config.image_size == 64);

    RunConfig incomplete = cli::resolve_run_config({}, {});
    CHECK_THROWS_AS(cli::cmd_init_weights(incomplete, sink), ParameterError);
}

TEST_CASE("cmd_make_pool writes deterministic, loadable pools") {
    TempDir dir("cli_pool_test");
    std::ostringstream sink;

    RunConfig cfg = cli::resolve_run_config({}, {{"seed", "9"}, {"pool.count", "3"}});
    cfg.paths.output = dir.sub("pool_a");
    CHECK(cli::cmd_make_pool(cfg, sink) == 0);
    ReferencePool pool = load_pool(dir.sub("pool_a"), {64, 64, 3});
    CHECK(pool.entries.size() == 3);

    RunConfig again = cfg;
    again.paths.output = dir.sub("pool_b");
    CHECK(cli::cmd_make_pool(again, sink) == 0);
    for (int i = 0; i < 3; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "pool_%04d.ppm", i);
        CHECK(read_file_bytes((std::filesystem::path(dir.sub("pool_a")) / name).string()) ==
              read_file_bytes((std::filesystem::path(dir.sub("pool_b")) / name).string()));
    }

    RunConfig zero = cfg;
    zero.pool_count = 0;
    CHECK_THROWS_AS(cli::cmd_make_pool(zero, sink), ParameterError);
}

namespace {

// Shared fixture for the end-to-end subcommands: weights, pool, one clean
// image, one target line.
struct PipelineFixture {
    TempDir dir{"cli_pipeline_fixture"};
    RunConfig base;

    PipelineFixture() {
        std::ostringstream sink;
        base = cli::resolve_run_config({}, {{"seed", "7"}});
        base.paths.weights = dir.sub("w.bin");
        cli::cmd_init_weights(base, sink);

        RunConfig pool_cfg = cli::resolve_run_config({}, {{"seed", "9"}, {"pool.count", "6"}});
        pool_cfg.paths.output = dir.sub("pool");
        cli::cmd_make_pool(pool_cfg, sink);

        std::filesystem::create_directories(dir.sub("clean"));
        write_ppm(synthesize_pool_image(33, 0, 64), dir.sub("clean") + "/img_000.ppm");
        write_text(dir.sub("targets.txt"), "a photo of a dog on a beach\n");

        base.paths.pool = dir.sub("pool");
        base.paths.clean = dir.sub("clean");
        base.paths.target_text = dir.sub("targets.txt");
    }
};

} // namespace

TEST_CASE("cmd_select_anchors writes a manifest consistent with the library") {
    PipelineFixture fx;
    std::ostringstream sink;
    RunConfig cfg = fx.base;
    cfg.attack.topk = 3;
    cfg.paths.output = fx.dir.sub("anchors_out");
    CHECK(cli::cmd_select_anchors(cfg, sink) == 0);

    std::ifstream in(fx.dir.sub("anchors_out") + "/anchors.txt");
    std::stringstream manifest;
    manifest << in.rdbuf();

    SurrogateModel model = load_weights(cfg.paths.weights);
    ReferencePool pool = load_pool(cfg.paths.pool, {64, 64, 3});
    auto tokens = tokenize_bytes("a photo of a dog on a beach", model.config);
    AnchorSet set = build_anchor_set(pool, model, tokens, 3, cfg.attack.tau, cfg.attack.layers);
    CHECK(manifest.str() == anchor_manifest(set, 3, cfg.attack.tau));
    CHECK(manifest.str().find("# K = 3") != std::string::npos);

    double sum = 0.0;
    for (double w : set.weights) sum += w;
    CHECK(std::fabs(sum - 1.0) < 1e-9);

    CHECK(std::filesystem::exists(fx.dir.sub("anchors_out") + "/effective-config.txt"));
}

TEST_CASE("cmd_attack produces budget-true, deterministic outputs") {
    PipelineFixture fx;
    std::ostringstream sink;
    RunConfig cfg = fx.base;
    cfg.attack.steps = 2;
    cfg.attack.topk = 3;
    cfg.attack.record_trace = true;

    cfg.paths.output = fx.dir.sub("out_a");
    CHECK(cli::cmd_attack(cfg, sink) == 0);
    CHECK(std::filesystem::exists(fx.dir.sub("out_a") + "/adv/img_000.ppm"));
    CHECK(std::filesystem::exists(fx.dir.sub("out_a") + "/summary.csv"));
    CHECK(std::filesystem::exists(fx.dir.sub("out_a") + "/trace_img_000.ppm.csv"));
    CHECK(std::filesystem::exists(fx.dir.sub("out_a") + "/effective-config.txt"));

    // byte-identical rerun
    RunConfig cfg_b = cfg;
    cfg_b.paths.output = fx.dir.sub("out_b");
    CHECK(cli::cmd_attack(cfg_b, sink) == 0);
    CHECK(read_file_bytes(fx.dir.sub("out_a") + "/adv/img_000.ppm") ==
          read_file_bytes(fx.dir.sub("out_b") + "/adv/img_000.ppm"));
    CHECK(read_file_bytes(fx.dir.sub("out_a") + "/summary.csv") ==
          read_file_bytes(fx.dir.sub("out_b") + "/summary.csv"));

    // integer budget in the summary: ...,linf_int,budget_int
    std::ifstream in(fx.dir.sub("out_a") + "/summary.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header.find("linf_int,budget_int") != std::string::npos);
    const auto last_comma = row.rfind(',');
    const auto prev_comma = row.rfind(',', last_comma - 1);
    const int budget_int = std::stoi(row.substr(last_comma + 1));
    const int linf_int = std::stoi(row.substr(prev_comma + 1, last_comma - prev_comma - 1));
    CHECK(budget_int == 8);
    CHECK(linf_int <= budget_int);
}

TEST_CASE("cmd_attack with zero budget returns the inputs byte-for-byte") {
    PipelineFixture fx;
    std::ostringstream sink;
    RunConfig cfg = fx.base;
    cfg.attack.steps = 2;
    cfg.attack.topk = 3;
    cfg.attack.epsilon = 0.0;
    cfg.paths.output = fx.dir.sub("out_zero");
    CHECK(cli::cmd_attack(cfg, sink) == 0);
    CHECK(read_file_bytes(fx.dir.sub("out_zero") + "/adv/img_000.ppm") ==
          read_file_bytes(fx.dir.sub("clean") + "/img_000.ppm"));
}

TEST_CASE("cmd_eval writes the three reports with zero deltas for identity") {
    PipelineFixture fx;
    std::ostringstream sink;
    RunConfig cfg = fx.base;
    cfg.paths.adversarial = fx.dir.sub("clean"); // adversarial == clean
    cfg.eval_seeds = {11};
    cfg.defense_bits = 4;
    cfg.paths.output = fx.dir.sub("eval_out");
    CHECK(cli::cmd_eval(cfg, sink) == 0);

    auto bytes = read_file_bytes(fx.dir.sub("eval_out") + "/transfer_medians.csv");
    std::string medians(bytes.begin(), bytes.end());
    CHECK(medians.find("11,none,") != std::string::npos);
    CHECK(medians.find("11,bit4,") != std::string::npos);
    CHECK(std::filesystem::exists(fx.dir.sub("eval_out") + "/transfer_report.csv"));
    CHECK(std::filesystem::exists(fx.dir.sub("eval_out") + "/quality_report.csv"));

    auto qbytes = read_file_bytes(fx.dir.sub("eval_out") + "/quality_report.csv");
    std::string quality(qbytes.begin(), qbytes.end());
    CHECK(quality.find("img_000.ppm,1,100,0") != std::string::npos);
}

TEST_CASE("cmd_gradcheck passes normally and fails when corrupted") {
    std::ostringstream sink;
    RunConfig cfg = cli::resolve_run_config({}, {{"seed", "3"}});
    CHECK(cli::cmd_gradcheck(cfg, false, sink) == 0);
    CHECK(sink.str().find("gradcheck PASS") != std::string::npos);

    std::ostringstream sink2;
    CHECK(cli::cmd_gradcheck(cfg, true, sink2) == 3);
    CHECK(sink2.str().find("gradcheck FAIL") != std::string::npos);

    RunConfig bad = cfg;
    bad.gradcheck_step = 0.5;
    CHECK_THROWS_AS(cli::cmd_gradcheck(bad, false, sink), ParameterError);
}
