// Command-line frontend. Subcommands: init-weights, make-pool,
// select-anchors, attack, eval, gradcheck. Every option follows the
// precedence flag > --config file > preset default.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "tta/cli.hpp"

namespace {

struct FlagCollector {
    std::vector<std::pair<std::string, std::string>> values;

    // Registers a string-valued option that lands in the key-value set only
    // when the user actually passes it.
    void option(CLI::App* app, const std::string& flag, const std::string& key,
                const std::string& help) {
        auto cb = [this, key](const std::string& v) { values.emplace_back(key, v); };
        app->add_option_function<std::string>(flag, cb, help);
    }

    void flag(CLI::App* app, const std::string& flag_name, const std::string& key,
              const std::string& help) {
        auto cb = [this, key](std::int64_t count) {
            if (count > 0) values.emplace_back(key, "true");
        };
        app->add_flag_function(flag_name, cb, help);
    }
};

struct SubcommandSetup {
    CLI::App* app = nullptr;
    FlagCollector flags;
    std::string config_path;
};

void add_common(SubcommandSetup& s) {
    s.app->add_option("--config", s.config_path, "key = value configuration file");
    s.flags.option(s.app, "--preset", "preset", "configuration preset (vitb-paper)");
    s.flags.option(s.app, "--seed", "seed", "PRNG seed");
    s.flags.option(s.app, "--jobs", "jobs", "max concurrent images");
}

void add_attack_options(SubcommandSetup& s) {
    s.flags.option(s.app, "--epsilon", "epsilon", "L-inf budget (accepts a/b fractions)");
    s.flags.option(s.app, "--alpha", "alpha", "PGD step size (accepts a/b fractions)");
    s.flags.option(s.app, "--steps", "steps", "PGD iterations");
    s.flags.option(s.app, "--topk", "topk", "anchor count K");
    s.flags.option(s.app, "--tau", "tau", "anchor softmax temperature");
    s.flags.option(s.app, "--layers", "layers", "comma-separated tap layers");
    s.flags.option(s.app, "--lambda-anc", "loss.lambda_anc", "anchor loss weight");
    s.flags.option(s.app, "--lambda-feat", "loss.lambda_feat", "feature loss weight");
    s.flags.option(s.app, "--lambda-cls", "loss.lambda_cls", "CLS term weight");
    s.flags.option(s.app, "--lambda-spa", "loss.lambda_spa", "spatial term weight");
    s.flags.option(s.app, "--lambda-mid", "loss.lambda_mid", "cross-modal loss weight");
}

tta::cli::RunConfig resolve(const SubcommandSetup& s) {
    std::vector<std::pair<std::string, std::string>> file_kv;
    if (!s.config_path.empty()) file_kv = tta::cli::parse_config_file(s.config_path);
    return tta::cli::resolve_run_config(file_kv, s.flags.values);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Targeted transfer attacks on a miniature dual-encoder surrogate"};
    app.require_subcommand(1);

    SubcommandSetup init_weights, make_pool, select_anchors, attack, eval, gradcheck;

    init_weights.app = app.add_subcommand("init-weights", "generate surrogate weights");
    add_common(init_weights);
    init_weights.flags.option(init_weights.app, "--out", "paths.weights", "output weight file");

    make_pool.app = app.add_subcommand("make-pool", "generate a synthetic reference pool");
    add_common(make_pool);
    make_pool.flags.option(make_pool.app, "--out", "paths.output", "output directory");
    make_pool.flags.option(make_pool.app, "--count", "pool.count", "number of images");

    select_anchors.app = app.add_subcommand("select-anchors", "write the anchor manifest");
    add_common(select_anchors);
    add_attack_options(select_anchors);
    select_anchors.flags.option(select_anchors.app, "--weights", "paths.weights", "weight file");
    select_anchors.flags.option(select_anchors.app, "--pool", "paths.pool", "reference pool dir");
    select_anchors.flags.option(select_anchors.app, "--target-text", "paths.target_text",
                                "target text file (one target per line)");
    select_anchors.flags.option(select_anchors.app, "--out", "paths.output", "output directory");

    attack.app = app.add_subcommand("attack", "run the attack on clean images");
    add_common(attack);
    add_attack_options(attack);
    attack.flags.option(attack.app, "--weights", "paths.weights", "weight file");
    attack.flags.option(attack.app, "--clean", "paths.clean", "clean image file or directory");
    attack.flags.option(attack.app, "--pool", "paths.pool", "reference pool dir");
    attack.flags.option(attack.app, "--target-text", "paths.target_text", "target text file");
    attack.flags.option(attack.app, "--out", "paths.output", "output directory");
    attack.flags.flag(attack.app, "--record-trace", "record_trace", "write per-iteration traces");

    eval.app = app.add_subcommand("eval", "transfer and quality reports");
    add_common(eval);
    eval.flags.option(eval.app, "--clean", "paths.clean", "clean image directory");
    eval.flags.option(eval.app, "--adv", "paths.adversarial", "adversarial image directory");
    eval.flags.option(eval.app, "--target-text", "paths.target_text", "target text file");
    eval.flags.option(eval.app, "--eval-seeds", "eval.seeds", "comma-separated surrogate seeds");
    eval.flags.option(eval.app, "--defense-bits", "eval.defense_bits",
                      "bit-depth reduction defense (0 = off)");
    eval.flags.option(eval.app, "--out", "paths.output", "output directory");

    gradcheck.app = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    add_common(gradcheck);
    add_attack_options(gradcheck);
    gradcheck.flags.option(gradcheck.app, "--weights", "paths.weights",
                           "weight file (defaults to a seeded model)");
    gradcheck.flags.option(gradcheck.app, "--step", "gradcheck.step", "finite-difference step");
    gradcheck.flags.option(gradcheck.app, "--tolerance", "gradcheck.tolerance",
                           "max relative error accepted");
    bool corrupt = false;
    gradcheck.app->add_flag("--corrupt-gradient", corrupt,
                            "test hook: falsify the analytic gradient");

    CLI11_PARSE(app, argc, argv);

    try {
        if (init_weights.app->parsed()) return tta::cli::cmd_init_weights(resolve(init_weights));
        if (make_pool.app->parsed()) return tta::cli::cmd_make_pool(resolve(make_pool));
        if (select_anchors.app->parsed())
            return tta::cli::cmd_select_anchors(resolve(select_anchors));
        if (attack.app->parsed()) return tta::cli::cmd_attack(resolve(attack));
        if (eval.app->parsed()) return tta::cli::cmd_eval(resolve(eval));
        if (gradcheck.app->parsed()) return tta::cli::cmd_gradcheck(resolve(gradcheck), corrupt);
    } catch (const tta::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
