#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tta/errors.hpp"
#include "tta/image_io.hpp"
#include "tta/objectives.hpp"
#include "tta/surrogate.hpp"
#include "tta/tensor.hpp"

// The attack driver: Phase 1 precomputes the detached targets (anchor set,
// text embedding, projected per-layer text features), Phase 2 runs N
// sign-gradient PGD iterations under an L-inf budget with pixel-range
// feasibility. Deterministic given (weights, inputs, config).
namespace tta {

struct AttackConfig {
    double epsilon = 8.0 / 255.0;
    double alpha = 1.0 / 255.0;
    int steps = 100;
    std::size_t topk = 5;
    double tau = 5.0;
    std::vector<int> layers = {7, 9, 11};
    LossWeights loss_weights;
    std::uint64_t seed = 0;
    bool record_trace = false;

    // epsilon == 0 is the explicit zero-budget case (x_adv == x); otherwise
    // 0 < alpha <= epsilon <= 1.
    void validate(const SurrogateConfig& model_config) const {
        if (!(epsilon >= 0.0 && epsilon <= 1.0))
            throw ParameterError("attack: epsilon must lie in [0, 1]");
        if (!(alpha > 0.0))
            throw ParameterError("attack: alpha must be > 0");
        if (epsilon > 0.0 && alpha > epsilon)
            throw ParameterError("attack: alpha must not exceed epsilon");
        if (steps < 1)
            throw ParameterError("attack: steps must be >= 1");
        if (topk < 1)
            throw ParameterError("attack: K must be >= 1");
        if (!(tau > 0.0))
            throw ParameterError("attack: tau must be > 0");
        if (layers.empty())
            throw ParameterError("attack: layer set must be non-empty");
        for (int l : layers)
            if (l < 1 || static_cast<std::size_t>(l) > model_config.depth_img)
                throw ParameterError("attack: layer " + std::to_string(l) + " outside tower depth");
        loss_weights.validate();
    }
};

struct AttackResult {
    Tensor x_adv;
    Tensor delta;
    std::vector<LossBreakdown> loss_trace; // per iteration when record_trace
    std::vector<double> delta_linf_trace;  // max |delta| at each traced iteration
    LossBreakdown final_breakdown;
    int iterations_run = 0;
};

// Deep-layer uniform sampling. The published sets fall out of the fractions
// directly: depth 12 -> {7, 9, 11}, depth 24 -> {14, 18, 22},
// depth 40 -> {23, 30, 37}.
inline std::vector<int> select_layers(int tower_depth) {
    if (tower_depth < 4)
        throw ParameterError("select_layers: tower depth must be >= 4");
    const double fractions[3] = {0.58, 0.75, 0.92};
    std::set<int> picked;
    for (double f : fractions) {
        int l = static_cast<int>(std::floor(f * tower_depth + 0.5));
        picked.insert(std::clamp(l, 2, tower_depth - 1));
    }
    if (picked.size() != 3)
        throw ParameterError("select_layers: depth " + std::to_string(tower_depth) +
                             " does not yield 3 distinct layers");
    return std::vector<int>(picked.begin(), picked.end());
}

// One PGD update: delta' = clip(delta - alpha * sign(grad), -epsilon, epsilon)
// with sign(0) = 0.
inline Tensor pgd_step(const Tensor& delta, const Tensor& grad, double alpha, double epsilon) {
    if (!delta.same_dims(grad))
        throw ParameterError("pgd_step: delta and gradient dims differ");
    Tensor next = delta;
    for (std::size_t i = 0; i < next.size(); ++i) {
        const double g = grad[i];
        const double sign = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
        double v = next[i] - alpha * sign;
        if (v > epsilon) v = epsilon;
        if (v < -epsilon) v = -epsilon;
        next[i] = v;
    }
    return next;
}

inline Tensor clamp01(const Tensor& t) {
    Tensor out = t;
    for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

// Called once per iteration with (iteration, delta before the update, the
// clamped image the loss was evaluated at). Used by budget/feasibility tests.
using IterationObserver = std::function<void(int, const Tensor&, const Tensor&)>;

// Phase 2 only: PGD against precomputed targets.
inline AttackResult run_attack(const SurrogateModel& model, const Tensor& x,
                               const AttackTargets& targets, const AttackConfig& config,
                               const IterationObserver& observer = {}) {
    config.validate(model.config);
    if (x.dims() != std::vector<std::size_t>{model.config.image_size, model.config.image_size, 3})
        throw ParameterError("attack: image dims do not match model config");
    check_image_range(x);

    AttackResult result;
    Tensor delta(x.dims());

    for (int iter = 0; iter < config.steps; ++iter) {
        // x_eval = clamp(x + delta); gradients pass through the clamp inside
        // (0,1) and are zero outside.
        Tensor shifted = x;
        for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += delta[i];
        Tensor x_eval = clamp01(shifted);

        LossEvaluation eval;
        try {
            eval = evaluate_losses_with_gradient(model, x_eval, targets, config.loss_weights);
        } catch (const EvaluationError& e) {
            throw EvaluationError("attack iteration " + std::to_string(iter) + ": " + e.what());
        }
        if (config.record_trace) {
            result.loss_trace.push_back(eval.breakdown);
            double linf = 0.0;
            for (double v : delta.values()) linf = std::max(linf, std::fabs(v));
            result.delta_linf_trace.push_back(linf);
        }
        if (observer) observer(iter, delta, x_eval);

        Tensor grad = eval.image_gradient;
        for (std::size_t i = 0; i < grad.size(); ++i)
            if (!(shifted[i] > 0.0 && shifted[i] < 1.0)) grad[i] = 0.0;

        delta = pgd_step(delta, grad, config.alpha, config.epsilon);
    }

    result.delta = delta;
    Tensor final_img = x;
    for (std::size_t i = 0; i < final_img.size(); ++i) final_img[i] += delta[i];
    result.x_adv = clamp01(final_img);
    result.final_breakdown = evaluate_losses(model, result.x_adv, targets, config.loss_weights);
    result.iterations_run = config.steps;
    return result;
}

// Algorithm front door: Phase 1 then Phase 2.
inline AttackResult run_attack(const SurrogateModel& model, const Tensor& x,
                               std::span<const int> target_tokens, const ReferencePool& pool,
                               const AttackConfig& config, const IterationObserver& observer = {}) {
    config.validate(model.config);
    AttackTargets targets = build_attack_targets(model, pool, target_tokens, config.topk,
                                                 config.tau, config.layers);
    return run_attack(model, x, targets, config, observer);
}

// Writes the adversarial image as 8-bit PPM and re-verifies that the
// quantized output stays within round(epsilon * 255) integer levels of the
// quantized clean image.
inline void export_adversarial(const AttackResult& result, const Tensor& clean, double epsilon,
                               const std::string& path) {
    if (!result.x_adv.same_dims(clean))
        throw ParameterError("export: clean image dims do not match the attack result");
    const int budget = static_cast<int>(std::floor(epsilon * 255.0 + 0.5));
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const int qa = quantize_8bit(result.x_adv[i]);
        const int qc = quantize_8bit(clean[i]);
        if (std::abs(qa - qc) > budget)
            throw ExportBudgetError("export: quantized deviation " + std::to_string(qa - qc) +
                                    " exceeds budget " + std::to_string(budget) +
                                    " at coordinate " + std::to_string(i));
    }
    write_ppm(result.x_adv, path);
}

// Per-iteration trace CSV: iteration, loss terms, total, and max |delta| at
// the evaluation point of that iteration.
inline std::string trace_csv(const AttackResult& result) {
    std::string out = "iteration,l_txt,l_anc,l_feat,l_mid,l_total,max_abs_delta\n";
    char buf[256];
    for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
        const LossBreakdown& b = result.loss_trace[i];
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", i, b.l_txt,
                      b.l_anc, b.l_feat, b.l_mid, b.l_total, result.delta_linf_trace[i]);
        out += buf;
    }
    return out;
}

} // namespace tta
