#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "tta/anchors.hpp"
#include "tta/autodiff.hpp"
#include "tta/errors.hpp"
#include "tta/numerics.hpp"
#include "tta/surrogate.hpp"
#include "tta/tensor.hpp"

// The four loss terms and their weighted combination. Every term is a sum of
// cosine distances, so each lies in [0, 2] per cosine and depends on the
// adversarial image only through directions, never magnitudes.
namespace tta {

struct LossWeights {
    double lambda_anc = 1.0;
    double lambda_feat = 1.5;
    double lambda_cls = 1.0;
    double lambda_spa = 0.7;
    double lambda_mid = 2.5;

    void validate() const {
        if (lambda_anc < 0 || lambda_feat < 0 || lambda_cls < 0 || lambda_spa < 0 || lambda_mid < 0)
            throw ParameterError("loss weights must be non-negative");
    }
};

struct LossBreakdown {
    double l_txt = 0.0;
    double l_anc = 0.0;
    double l_feat = 0.0;
    double l_mid = 0.0;
    double l_total = 0.0;
};

// l_txt: cosine distance between the adversarial embedding and the target
// text embedding.
inline double loss_txt(const Tensor& adv_embedding, const Tensor& text_embedding) {
    return cosine_distance(adv_embedding, text_embedding);
}

// l_anc: one minus the weighted mixture of per-anchor cosine similarities.
inline double loss_anc(const Tensor& adv_embedding, const AnchorSet& anchors) {
    if (anchors.embedding_targets.empty())
        throw ParameterError("loss_anc: anchor set has no embedding targets");
    double mix = 0.0;
    for (std::size_t k = 0; k < anchors.embedding_targets.size(); ++k)
        mix += anchors.weights[k] * cosine_similarity(adv_embedding, anchors.embedding_targets[k]);
    return 1.0 - mix;
}

// l_feat: per configured layer, the weighted CLS and pooled-patch cosine
// distances to the anchor targets. The tap layers must match the anchor
// set's layer targets exactly.
inline double loss_feat(std::span<const LayerFeatureBundle> adv_taps, const AnchorSet& anchors,
                        double lambda_cls, double lambda_spa) {
    if (adv_taps.size() != anchors.layer_targets.size())
        throw ParameterError("loss_feat: tap layers do not match anchor layer targets");
    double total = 0.0;
    for (const auto& tap : adv_taps) {
        auto it = anchors.layer_targets.find(tap.layer_index);
        if (it == anchors.layer_targets.end())
            throw ParameterError("loss_feat: no anchor target for layer " +
                                 std::to_string(tap.layer_index));
        total += lambda_cls * cosine_distance(tap.cls, it->second.cls_target) +
                 lambda_spa * cosine_distance(tap.pooled, it->second.pooled_target);
    }
    return total;
}

// l_mid: per layer, the cosine distance between the projected intermediate
// CLS and EOS features. Both sides pass through their tower's final
// layer-norm parameters before projection.
inline double loss_mid(const SurrogateModel& model, std::span<const LayerFeatureBundle> adv_taps,
                       std::span<const TextLayerFeature> text_taps) {
    if (adv_taps.size() != text_taps.size())
        throw ParameterError("loss_mid: visual and text tap counts differ");
    double total = 0.0;
    for (std::size_t i = 0; i < adv_taps.size(); ++i) {
        const Tensor vis = project_visual(model, final_visual_layer_norm(model, adv_taps[i].cls));
        const Tensor txt = project_text(model, final_text_layer_norm(model, text_taps[i].eos));
        total += cosine_distance(vis, txt);
    }
    return total;
}

// l_total = l_txt + lambda_anc*l_anc + lambda_feat*l_feat + lambda_mid*l_mid.
inline LossBreakdown loss_total(double l_txt, double l_anc, double l_feat, double l_mid,
                                const LossWeights& w) {
    for (double v : {l_txt, l_anc, l_feat, l_mid})
        if (!std::isfinite(v)) throw EvaluationError("loss_total: non-finite component");
    LossBreakdown b;
    b.l_txt = l_txt;
    b.l_anc = l_anc;
    b.l_feat = l_feat;
    b.l_mid = l_mid;
    b.l_total = l_txt + w.lambda_anc * l_anc + w.lambda_feat * l_feat + w.lambda_mid * l_mid;
    return b;
}

// Everything Phase 2 needs, computed once in Phase 1 and detached: the text
// embedding, the anchor set, and the projected per-layer text features.
struct AttackTargets {
    std::vector<int> layers;                // configured image-tower layers, ascending
    Tensor text_embedding;                  // {proj_dim}
    AnchorSet anchors;
    std::vector<TextLayerFeature> text_taps;   // raw EOS features, layer-for-layer
    std::vector<Tensor> mid_text_projected;    // normalized-and-projected, per layer
};

inline AttackTargets build_attack_targets(const SurrogateModel& model, const ReferencePool& pool,
                                          std::span<const int> target_tokens, std::size_t k,
                                          double tau, std::span<const int> layers) {
    AttackTargets t;
    t.layers.assign(layers.begin(), layers.end());
    std::sort(t.layers.begin(), t.layers.end());
    if (std::unique(t.layers.begin(), t.layers.end()) != t.layers.end())
        throw ParameterError("attack targets: duplicate layer in layer set");
    if (t.layers.empty())
        throw ParameterError("attack targets: layer set must be non-empty");

    t.anchors = build_anchor_set(pool, model, target_tokens, k, tau, t.layers);

    std::vector<int> text_layers;
    text_layers.reserve(t.layers.size());
    for (int l : t.layers) text_layers.push_back(text_layer_for(model.config, l));
    TextEncoding text = encode_text(model, target_tokens, text_layers);
    t.text_embedding = text.embedding;
    t.text_taps = text.taps;
    for (const auto& tap : text.taps)
        t.mid_text_projected.push_back(
            project_text(model, final_text_layer_norm(model, tap.eos)));
    return t;
}

namespace graph {

struct LossNodes {
    ad::NodeId txt = 0;
    ad::NodeId anc = 0;
    ad::NodeId feat = 0;
    ad::NodeId mid = 0;
    ad::NodeId total = 0;
};

// Assembles the loss graph on top of an encoded image. All target tensors
// enter as constants, so gradients flow only through the image.
inline LossNodes total_loss_graph(ad::Tape& t, const SurrogateModel& model, const ImageGraph& img,
                                  const AttackTargets& targets, const LossWeights& w) {
    w.validate();
    if (img.taps.size() != targets.layers.size())
        throw ParameterError("loss graph: image taps do not cover the target layer set");

    LossNodes nodes;
    nodes.txt = t.cosine_distance(img.embedding, t.constant(targets.text_embedding));

    // anc: 1 - sum_k w_k cos(emb, emb_k)
    ad::NodeId mix = 0;
    bool have_mix = false;
    for (std::size_t k = 0; k < targets.anchors.embedding_targets.size(); ++k) {
        ad::NodeId c = t.cosine(img.embedding, t.constant(targets.anchors.embedding_targets[k]));
        ad::NodeId scaled = t.scale(c, targets.anchors.weights[k]);
        mix = have_mix ? t.add(mix, scaled) : scaled;
        have_mix = true;
    }
    nodes.anc = t.affine(mix, -1.0, 1.0);

    // feat: per layer, lambda_cls * D(cls) + lambda_spa * D(pooled)
    ad::NodeId feat = 0;
    bool have_feat = false;
    for (std::size_t i = 0; i < img.taps.size(); ++i) {
        const auto& tap = img.taps[i];
        if (tap.layer_index != targets.layers[i])
            throw ParameterError("loss graph: tap layers out of order");
        const LayerTarget& lt = targets.anchors.layer_targets.at(tap.layer_index);
        ad::NodeId dc = t.cosine_distance(tap.cls, t.constant(lt.cls_target));
        ad::NodeId dp = t.cosine_distance(tap.pooled, t.constant(lt.pooled_target));
        ad::NodeId term = t.add(t.scale(dc, w.lambda_cls), t.scale(dp, w.lambda_spa));
        feat = have_feat ? t.add(feat, term) : term;
        have_feat = true;
    }
    nodes.feat = feat;

    // mid: per layer, D(project(ln(cls)), projected text feature)
    ad::NodeId mid = 0;
    bool have_mid = false;
    for (std::size_t i = 0; i < img.taps.size(); ++i) {
        ad::NodeId normed = t.layer_norm(img.taps[i].cls, img.final_gamma, img.final_beta);
        ad::NodeId projected = t.vecmat(normed, img.projection);
        ad::NodeId d = t.cosine_distance(projected, t.constant(targets.mid_text_projected[i]));
        mid = have_mid ? t.add(mid, d) : d;
        have_mid = true;
    }
    nodes.mid = mid;

    ad::NodeId total = nodes.txt;
    total = t.add(total, t.scale(nodes.anc, w.lambda_anc));
    total = t.add(total, t.scale(nodes.feat, w.lambda_feat));
    total = t.add(total, t.scale(nodes.mid, w.lambda_mid));
    nodes.total = total;
    return nodes;
}

} // namespace graph

struct LossEvaluation {
    LossBreakdown breakdown;
    Tensor image_gradient; // same dims as the image
};

namespace detail {
inline LossBreakdown breakdown_from_nodes(const ad::Tape& t, const graph::LossNodes& nodes,
                                          const LossWeights& w) {
    LossBreakdown b;
    b.l_txt = t.value(nodes.txt).item();
    b.l_anc = t.value(nodes.anc).item();
    b.l_feat = t.value(nodes.feat).item();
    b.l_mid = t.value(nodes.mid).item();
    b.l_total = t.value(nodes.total).item();
    if (!std::isfinite(b.l_total))
        throw EvaluationError("loss evaluation produced a non-finite total");
    (void)w;
    return b;
}
} // namespace detail

// Full loss breakdown at an image, no gradient.
inline LossBreakdown evaluate_losses(const SurrogateModel& model, const Tensor& image,
                                     const AttackTargets& targets, const LossWeights& w) {
    ad::Tape t;
    ad::NodeId img = t.constant(image);
    graph::ImageGraph g = graph::encode_image_graph(t, model, img, targets.layers);
    graph::LossNodes nodes = graph::total_loss_graph(t, model, g, targets, w);
    return detail::breakdown_from_nodes(t, nodes, w);
}

// Breakdown plus the exact gradient of l_total w.r.t. the image.
inline LossEvaluation evaluate_losses_with_gradient(const SurrogateModel& model, const Tensor& image,
                                                    const AttackTargets& targets,
                                                    const LossWeights& w) {
    ad::Tape t;
    ad::NodeId img = t.leaf(image);
    graph::ImageGraph g = graph::encode_image_graph(t, model, img, targets.layers);
    graph::LossNodes nodes = graph::total_loss_graph(t, model, g, targets, w);
    LossEvaluation out;
    out.breakdown = detail::breakdown_from_nodes(t, nodes, w);
    t.backward(nodes.total);
    out.image_gradient = t.grad(img);
    return out;
}

} // namespace tta
