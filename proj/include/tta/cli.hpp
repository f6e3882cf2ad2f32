#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tta/anchors.hpp"
#include "tta/attack.hpp"
#include "tta/evaluation.hpp"
#include "tta/fileio.hpp"
#include "tta/image_io.hpp"
#include "tta/numerics.hpp"
#include "tta/objectives.hpp"
#include "tta/parallel.hpp"
#include "tta/surrogate.hpp"

// Batch CLI plumbing: run configuration with flag > config-file > preset
// precedence, the subcommand implementations, and the effective-config echo
// that every subcommand drops into its output directory.
namespace tta::cli {

struct RunConfig {
    std::string preset = "vitb-paper";
    SurrogateConfig surrogate = reference_config();
    AttackConfig attack;
    std::uint64_t seed = 7;
    int jobs = 1;
    std::size_t pool_count = 20;
    double gradcheck_step = 1e-5;
    double gradcheck_tolerance = 1e-4;
    int defense_bits = 0;                    // 0 disables the defense pass
    std::vector<std::uint64_t> eval_seeds = {11};
    struct Paths {
        std::string weights;
        std::string clean;
        std::string pool;
        std::string target_text;
        std::string adversarial;
        std::string output;
    } paths;
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& value) {
    // Accepts plain decimals and "a/b" fractions, so budgets like 8/255 stay
    // exact.
    const auto slash = value.find('/');
    try {
        std::size_t used = 0;
        if (slash != std::string::npos) {
            const double num = std::stod(value.substr(0, slash), &used);
            if (used != slash) throw std::invalid_argument(value);
            const double den = std::stod(value.substr(slash + 1), &used);
            if (used != value.size() - slash - 1 || den == 0.0)
                throw std::invalid_argument(value);
            return num / den;
        }
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ParameterError("config: cannot parse number for '" + key + "': " + value);
    }
}

inline long long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ParameterError("config: cannot parse integer for '" + key + "': " + value);
    }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ParameterError("config: cannot parse boolean for '" + key + "': " + value);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
    std::vector<T> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(static_cast<T>(parse_int(key, item)));
    if (out.empty())
        throw ParameterError("config: empty list for '" + key + "'");
    return out;
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

inline void apply_preset(RunConfig& cfg, const std::string& name) {
    if (name != "vitb-paper")
        throw ParameterError("unknown preset '" + name + "' (available: vitb-paper)");
    cfg.preset = name;
    cfg.surrogate = reference_config(cfg.surrogate.seed);
    cfg.attack = AttackConfig{}; // struct defaults carry the preset values
}

// One `key = value` assignment; unknown keys are rejected.
inline void apply_key_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "preset") {
        apply_preset(cfg, value);
    } else if (key == "seed") {
        cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
    } else if (key == "jobs") {
        cfg.jobs = static_cast<int>(parse_int(key, value));
        if (cfg.jobs < 1) throw ParameterError("config: jobs must be >= 1");
    } else if (key == "epsilon") {
        cfg.attack.epsilon = parse_double(key, value);
    } else if (key == "alpha") {
        cfg.attack.alpha = parse_double(key, value);
    } else if (key == "steps") {
        cfg.attack.steps = static_cast<int>(parse_int(key, value));
    } else if (key == "topk") {
        cfg.attack.topk = static_cast<std::size_t>(parse_int(key, value));
    } else if (key == "tau") {
        cfg.attack.tau = parse_double(key, value);
    } else if (key == "layers") {
        cfg.attack.layers = parse_list<int>(key, value);
    } else if (key == "record_trace") {
        cfg.attack.record_trace = parse_bool(key, value);
    } else if (key == "loss.lambda_anc") {
        cfg.attack.loss_weights.lambda_anc = parse_double(key, value);
    } else if (key == "loss.lambda_feat") {
        cfg.attack.loss_weights.lambda_feat = parse_double(key, value);
    } else if (key == "loss.lambda_cls") {
        cfg.attack.loss_weights.lambda_cls = parse_double(key, value);
    } else if (key == "loss.lambda_spa") {
        cfg.attack.loss_weights.lambda_spa = parse_double(key, value);
    } else if (key == "loss.lambda_mid") {
        cfg.attack.loss_weights.lambda_mid = parse_double(key, value);
    } else if (key == "pool.count") {
        cfg.pool_count = static_cast<std::size_t>(parse_int(key, value));
    } else if (key == "gradcheck.step") {
        cfg.gradcheck_step = parse_double(key, value);
    } else if (key == "gradcheck.tolerance") {
        cfg.gradcheck_tolerance = parse_double(key, value);
    } else if (key == "eval.seeds") {
        cfg.eval_seeds = parse_list<std::uint64_t>(key, value);
    } else if (key == "eval.defense_bits") {
        cfg.defense_bits = static_cast<int>(parse_int(key, value));
        if (cfg.defense_bits != 0 && (cfg.defense_bits < 1 || cfg.defense_bits > 8))
            throw ParameterError("config: eval.defense_bits must be 0 or in [1, 8]");
    } else if (key == "paths.weights") {
        cfg.paths.weights = value;
    } else if (key == "paths.clean") {
        cfg.paths.clean = value;
    } else if (key == "paths.pool") {
        cfg.paths.pool = value;
    } else if (key == "paths.target_text") {
        cfg.paths.target_text = value;
    } else if (key == "paths.adversarial") {
        cfg.paths.adversarial = value;
    } else if (key == "paths.output") {
        cfg.paths.output = value;
    } else {
        throw ParameterError("config: unknown key '" + key + "'");
    }
}

// Flat `key = value` file with '#' comments and dotted keys.
inline std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParameterError("cannot open config file: " + path);
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    int line_no = 0;
    auto trim = [](std::string s) {
        const char* ws = " \t\r\n";
        const auto b = s.find_first_not_of(ws);
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(ws);
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParameterError("config: missing '=' at " + path + ":" + std::to_string(line_no));
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ParameterError("config: empty key or value at " + path + ":" +
                                 std::to_string(line_no));
        entries.emplace_back(std::move(key), std::move(value));
    }
    return entries;
}

// Precedence: flag > config file > preset default. The preset name itself
// follows the same rule and is applied before any other key.
inline RunConfig resolve_run_config(const std::vector<std::pair<std::string, std::string>>& file_kv,
                                    const std::vector<std::pair<std::string, std::string>>& flag_kv) {
    RunConfig cfg;
    std::string preset = cfg.preset;
    for (const auto& [k, v] : file_kv)
        if (k == "preset") preset = v;
    for (const auto& [k, v] : flag_kv)
        if (k == "preset") preset = v;
    apply_preset(cfg, preset);
    for (const auto& [k, v] : file_kv)
        if (k != "preset") apply_key_value(cfg, k, v);
    for (const auto& [k, v] : flag_kv)
        if (k != "preset") apply_key_value(cfg, k, v);
    return cfg;
}

// The effective configuration as sorted `key = value` lines.
inline std::string echo_config(const RunConfig& cfg) {
    using detail::format_double;
    std::map<std::string, std::string> kv;
    kv["preset"] = cfg.preset;
    kv["seed"] = std::to_string(cfg.seed);
    kv["jobs"] = std::to_string(cfg.jobs);
    kv["epsilon"] = format_double(cfg.attack.epsilon);
    kv["alpha"] = format_double(cfg.attack.alpha);
    kv["steps"] = std::to_string(cfg.attack.steps);
    kv["topk"] = std::to_string(cfg.attack.topk);
    kv["tau"] = format_double(cfg.attack.tau);
    std::string layers;
    for (int l : cfg.attack.layers) {
        if (!layers.empty()) layers += ",";
        layers += std::to_string(l);
    }
    kv["layers"] = layers;
    kv["record_trace"] = cfg.attack.record_trace ? "true" : "false";
    kv["loss.lambda_anc"] = format_double(cfg.attack.loss_weights.lambda_anc);
    kv["loss.lambda_feat"] = format_double(cfg.attack.loss_weights.lambda_feat);
    kv["loss.lambda_cls"] = format_double(cfg.attack.loss_weights.lambda_cls);
    kv["loss.lambda_spa"] = format_double(cfg.attack.loss_weights.lambda_spa);
    kv["loss.lambda_mid"] = format_double(cfg.attack.loss_weights.lambda_mid);
    kv["pool.count"] = std::to_string(cfg.pool_count);
    kv["gradcheck.step"] = format_double(cfg.gradcheck_step);
    kv["gradcheck.tolerance"] = format_double(cfg.gradcheck_tolerance);
    std::string seeds;
    for (auto s : cfg.eval_seeds) {
        if (!seeds.empty()) seeds += ",";
        seeds += std::to_string(s);
    }
    kv["eval.seeds"] = seeds;
    kv["eval.defense_bits"] = std::to_string(cfg.defense_bits);
    kv["paths.weights"] = cfg.paths.weights;
    kv["paths.clean"] = cfg.paths.clean;
    kv["paths.pool"] = cfg.paths.pool;
    kv["paths.target_text"] = cfg.paths.target_text;
    kv["paths.adversarial"] = cfg.paths.adversarial;
    kv["paths.output"] = cfg.paths.output;

    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

namespace detail {

inline void require_path(const std::string& value, const std::string& key) {
    if (value.empty())
        throw ParameterError("missing required path: " + key);
}

inline void ensure_output_dir(const RunConfig& cfg) {
    require_path(cfg.paths.output, "paths.output");
    std::filesystem::create_directories(cfg.paths.output);
    write_file_atomic((std::filesystem::path(cfg.paths.output) / "effective-config.txt").string(),
                      echo_config(cfg));
}

inline std::vector<std::string> read_target_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParameterError("cannot open target text file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    if (lines.empty()) throw ParameterError("target text file has no targets: " + path);
    return lines;
}

// A clean path may be a single .ppm or a directory of them.
inline std::vector<NamedImage> load_images(const std::string& path,
                                           const std::vector<std::size_t>& dims) {
    namespace fs = std::filesystem;
    std::vector<NamedImage> images;
    if (fs::is_directory(path)) {
        ReferencePool pool = load_pool(path, dims);
        for (auto& e : pool.entries) images.push_back(NamedImage{e.id, std::move(e.image)});
    } else {
        Tensor img = read_ppm(path);
        if (img.dims() != dims)
            throw ImageIoError("image '" + path + "' has dims " + img.dims_string());
        images.push_back(NamedImage{fs::path(path).filename().string(), std::move(img)});
    }
    return images;
}

} // namespace detail

// init-weights: deterministic surrogate weights for a seed.
inline int cmd_init_weights(const RunConfig& cfg, std::ostream& out = std::cout) {
    detail::require_path(cfg.paths.weights, "paths.weights");
    SurrogateConfig sc = cfg.surrogate;
    sc.seed = cfg.seed;
    SurrogateModel model = init_model(sc);
    save_weights(model, cfg.paths.weights);
    out << echo_config(cfg);
    out << "wrote " << cfg.paths.weights << "\n";
    return 0;
}

// make-pool: procedurally generated reference images.
inline int cmd_make_pool(const RunConfig& cfg, std::ostream& out = std::cout) {
    if (cfg.pool_count < 1)
        throw ParameterError("make-pool: pool.count must be >= 1");
    detail::require_path(cfg.paths.output, "paths.output");
    std::filesystem::create_directories(cfg.paths.output);
    for (std::size_t i = 0; i < cfg.pool_count; ++i) {
        Tensor image = synthesize_pool_image(cfg.seed, i, cfg.surrogate.image_size);
        char name[32];
        std::snprintf(name, sizeof(name), "pool_%04zu.ppm", i);
        write_ppm(image, (std::filesystem::path(cfg.paths.output) / name).string());
    }
    write_file_atomic(
        (std::filesystem::path(cfg.paths.output) / "effective-config.txt").string(),
        echo_config(cfg));
    out << "wrote " << cfg.pool_count << " images to " << cfg.paths.output << "\n";
    return 0;
}

// select-anchors: Top-K manifest for the first target line.
inline int cmd_select_anchors(const RunConfig& cfg, std::ostream& out = std::cout) {
    detail::require_path(cfg.paths.weights, "paths.weights");
    detail::require_path(cfg.paths.pool, "paths.pool");
    detail::require_path(cfg.paths.target_text, "paths.target_text");
    SurrogateModel model = load_weights(cfg.paths.weights);
    const auto targets = detail::read_target_lines(cfg.paths.target_text);
    const auto tokens = tokenize_bytes(targets[0], model.config);
    ReferencePool pool =
        load_pool(cfg.paths.pool, {model.config.image_size, model.config.image_size, 3});
    detail::ensure_output_dir(cfg);

    AnchorSet set = build_anchor_set(pool, model, tokens, cfg.attack.topk, cfg.attack.tau,
                                     cfg.attack.layers);
    const std::string manifest = anchor_manifest(set, cfg.attack.topk, cfg.attack.tau);
    write_file_atomic((std::filesystem::path(cfg.paths.output) / "anchors.txt").string(), manifest);
    out << manifest;
    return 0;
}

// attack: adversarial PPMs (budget-verified), optional traces, summary CSV.
inline int cmd_attack(const RunConfig& cfg, std::ostream& out = std::cout) {
    detail::require_path(cfg.paths.weights, "paths.weights");
    detail::require_path(cfg.paths.clean, "paths.clean");
    detail::require_path(cfg.paths.pool, "paths.pool");
    detail::require_path(cfg.paths.target_text, "paths.target_text");
    SurrogateModel model = load_weights(cfg.paths.weights);
    cfg.attack.validate(model.config);
    const std::vector<std::size_t> dims = {model.config.image_size, model.config.image_size, 3};
    const auto clean = detail::load_images(cfg.paths.clean, dims);
    const auto target_lines = detail::read_target_lines(cfg.paths.target_text);
    ReferencePool pool = load_pool(cfg.paths.pool, dims);
    detail::ensure_output_dir(cfg);
    const auto adv_dir = std::filesystem::path(cfg.paths.output) / "adv";
    std::filesystem::create_directories(adv_dir);

    struct Row {
        std::string id;
        std::size_t target_index;
        LossBreakdown first, last;
        double clean_align, adv_align;
        int linf_int;
    };
    std::vector<Row> rows(clean.size());

    parallel_for(clean.size(), cfg.jobs, [&](std::size_t i) {
        const std::size_t target_index = i % target_lines.size();
        const auto tokens = tokenize_bytes(target_lines[target_index], model.config);
        AttackConfig ac = cfg.attack;
        ac.record_trace = true; // first-iteration breakdown feeds the summary
        AttackResult result = run_attack(model, clean[i].image, tokens, pool, ac);

        export_adversarial(result, clean[i].image, ac.epsilon,
                           (adv_dir / clean[i].id).string());
        if (cfg.attack.record_trace) {
            write_file_atomic((std::filesystem::path(cfg.paths.output) /
                               ("trace_" + clean[i].id + ".csv"))
                                  .string(),
                              trace_csv(result));
        }
        int linf_int = 0;
        for (std::size_t p = 0; p < clean[i].image.size(); ++p)
            linf_int = std::max(linf_int, std::abs(quantize_8bit(result.x_adv[p]) -
                                                   quantize_8bit(clean[i].image[p])));
        Row row;
        row.id = clean[i].id;
        row.target_index = target_index;
        row.first = result.loss_trace.front();
        row.last = result.final_breakdown;
        row.clean_align = alignment_score(model, clean[i].image, tokens);
        row.adv_align = alignment_score(model, result.x_adv, tokens);
        row.linf_int = linf_int;
        rows[i] = std::move(row);
    });

    const int budget_int = static_cast<int>(std::floor(cfg.attack.epsilon * 255.0 + 0.5));
    std::string summary =
        "image_id,target_index,initial_l_total,final_l_total,clean_alignment,adv_alignment,"
        "linf_int,budget_int\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), ",%zu,%.17g,%.17g,%.17g,%.17g,%d,%d\n", r.target_index,
                      r.first.l_total, r.last.l_total, r.clean_align, r.adv_align, r.linf_int,
                      budget_int);
        summary += r.id;
        summary += buf;
    }
    write_file_atomic((std::filesystem::path(cfg.paths.output) / "summary.csv").string(), summary);
    out << "budget epsilon = " << detail::format_double(cfg.attack.epsilon) << " (" << budget_int
        << "/255)\n";
    for (const auto& r : rows)
        out << r.id << ": l_total " << r.first.l_total << " -> " << r.last.l_total
            << ", alignment " << r.clean_align << " -> " << r.adv_align << ", linf_int "
            << r.linf_int << "\n";
    return 0;
}

// eval: transfer and quality reports over clean/adversarial directories.
inline int cmd_eval(const RunConfig& cfg, std::ostream& out = std::cout) {
    detail::require_path(cfg.paths.clean, "paths.clean");
    detail::require_path(cfg.paths.adversarial, "paths.adversarial");
    detail::require_path(cfg.paths.target_text, "paths.target_text");
    const std::vector<std::size_t> dims = {cfg.surrogate.image_size, cfg.surrogate.image_size, 3};
    const auto clean = detail::load_images(cfg.paths.clean, dims);
    const auto adv = detail::load_images(cfg.paths.adversarial, dims);
    if (clean.size() != adv.size())
        throw ParameterError("eval: clean and adversarial sets differ in size");
    for (std::size_t i = 0; i < clean.size(); ++i)
        if (clean[i].id != adv[i].id)
            throw ParameterError("eval: clean/adversarial pairing mismatch at '" + clean[i].id +
                                 "' vs '" + adv[i].id + "'");
    const auto target_lines = detail::read_target_lines(cfg.paths.target_text);
    detail::ensure_output_dir(cfg);

    std::vector<SurrogateModel> surrogates;
    for (auto seed : cfg.eval_seeds) {
        SurrogateConfig sc = cfg.surrogate;
        sc.seed = seed;
        surrogates.push_back(init_model(sc));
    }

    std::vector<std::vector<int>> targets;
    for (std::size_t i = 0; i < clean.size(); ++i)
        targets.push_back(tokenize_bytes(target_lines[i % target_lines.size()],
                                         surrogates.front().config));

    std::vector<DefenseTransform> defenses;
    if (cfg.defense_bits > 0) {
        const int bits = cfg.defense_bits;
        defenses.push_back(DefenseTransform{
            "bit" + std::to_string(bits),
            [bits](const Tensor& t) { return bit_reduce(t, bits); }});
    }

    TransferReport report = run_transfer_eval(clean, adv, targets, surrogates, defenses);
    write_file_atomic((std::filesystem::path(cfg.paths.output) / "transfer_report.csv").string(),
                      transfer_report_csv(report));
    write_file_atomic((std::filesystem::path(cfg.paths.output) / "transfer_medians.csv").string(),
                      transfer_aggregate_csv(report));

    std::vector<std::pair<std::string, QualityReport>> quality;
    for (std::size_t i = 0; i < clean.size(); ++i)
        quality.emplace_back(clean[i].id, quality_report(clean[i].image, adv[i].image));
    write_file_atomic((std::filesystem::path(cfg.paths.output) / "quality_report.csv").string(),
                      quality_report_csv(quality));

    out << transfer_aggregate_csv(report);
    return 0;
}

// gradcheck: analytic gradient of the full objective vs central differences
// on a self-contained synthetic instance. corrupt_gradient is a test hook
// that falsifies the analytic gradient to prove the check can fail.
inline int cmd_gradcheck(const RunConfig& cfg, bool corrupt_gradient = false,
                         std::ostream& out = std::cout) {
    if (!(cfg.gradcheck_step > 0.0) || cfg.gradcheck_step > 0.01)
        throw ParameterError("gradcheck: step must lie in (0, 0.01]");

    SurrogateModel model;
    if (!cfg.paths.weights.empty()) {
        model = load_weights(cfg.paths.weights);
    } else {
        SurrogateConfig sc = cfg.surrogate;
        sc.seed = cfg.seed;
        model = init_model(sc);
    }
    cfg.attack.validate(model.config);

    // Synthetic instance: procedural pool and clean image, fixed target.
    ReferencePool pool;
    pool.source_dir = "<synthetic>";
    const std::size_t pool_size = std::max<std::size_t>(cfg.attack.topk, 12);
    for (std::size_t i = 0; i < pool_size; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "pool_%04zu.ppm", i);
        pool.entries.push_back(
            PoolEntry{name, synthesize_pool_image(cfg.seed ^ 0xA5A5ull, i, model.config.image_size)});
    }
    Tensor image = synthesize_pool_image(cfg.seed ^ 0x5A5Aull, 99, model.config.image_size);
    const auto tokens = tokenize_bytes("a photo of a red vintage bicycle", model.config);

    AttackTargets targets = build_attack_targets(model, pool, tokens, cfg.attack.topk,
                                                 cfg.attack.tau, cfg.attack.layers);
    const LossWeights w = cfg.attack.loss_weights;

    auto value = [&](const Tensor& probe) {
        return evaluate_losses(model, probe, targets, w).l_total;
    };
    auto gradient = [&](const Tensor& probe) {
        Tensor g = evaluate_losses_with_gradient(model, probe, targets, w).image_gradient;
        if (corrupt_gradient)
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * g[i] + 1e-3;
        return g;
    };
    GradientReport report = gradient_check(value, gradient, image, cfg.gradcheck_step, 64, cfg.seed);

    out << echo_config(cfg);
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "max_relative_error = %.17g\nworst_coordinate = %zu\nanalytic = %.17g\n"
                  "numeric = %.17g\ntolerance = %.17g\n",
                  report.max_relative_error, report.worst_coordinate, report.analytic_value,
                  report.numeric_value, cfg.gradcheck_tolerance);
    out << buf;
    const bool ok = report.max_relative_error < cfg.gradcheck_tolerance;
    out << (ok ? "gradcheck PASS\n" : "gradcheck FAIL\n");
    return ok ? 0 : 3;
}

} // namespace tta::cli
