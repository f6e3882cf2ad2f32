#pragma once

#include <algorithm>
#include <bit>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tta/autodiff.hpp"
#include "tta/errors.hpp"
#include "tta/fileio.hpp"
#include "tta/numerics.hpp"
#include "tta/prng.hpp"
#include "tta/tensor.hpp"

// Miniature dual encoder: a ViT-style image tower and a causal transformer
// text tower, each exposing per-layer feature taps, plus two linear
// projection heads into a shared subspace. Weights are generated from a
// SplitMix64 stream (one draw per element, serialization order) and quantized
// to 32-bit floats on creation, so a weight file round-trips bit-exactly and
// any implementation of the same scheme reproduces the model from its seed.
namespace tta {

struct SurrogateConfig {
    std::size_t image_size = 64;   // pixels per side
    std::size_t patch_size = 8;
    std::size_t depth_img = 12;
    std::size_t depth_txt = 12;
    std::size_t width = 32;        // token embedding dimension
    std::size_t heads = 4;
    std::size_t proj_dim = 16;
    std::size_t vocab_size = 259;  // 256 bytes + BOS + EOS + PAD
    std::size_t max_text_len = 77;
    std::uint64_t seed = 0;

    std::size_t patches_per_side() const { return image_size / patch_size; }
    std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
    std::size_t seq_len() const { return num_patches() + 1; } // + CLS
    std::size_t patch_features() const { return patch_size * patch_size * 3; }
    std::size_t head_dim() const { return width / heads; }
    std::size_t mlp_dim() const { return 4 * width; }

    // Last three vocabulary ids, in order.
    int bos_id() const { return static_cast<int>(vocab_size) - 3; }
    int eos_id() const { return static_cast<int>(vocab_size) - 2; }
    int pad_id() const { return static_cast<int>(vocab_size) - 1; }

    void validate() const {
        if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0)
            throw ParameterError("config: image_size must be a positive multiple of patch_size");
        if (width == 0 || heads == 0 || width % heads != 0)
            throw ParameterError("config: width must be a positive multiple of heads");
        if (proj_dim == 0 || proj_dim > width)
            throw ParameterError("config: proj_dim must be in [1, width]");
        if (depth_img == 0 || depth_txt == 0)
            throw ParameterError("config: tower depths must be >= 1");
        if (vocab_size < 3)
            throw ParameterError("config: vocab_size must cover BOS/EOS/PAD");
        if (max_text_len == 0)
            throw ParameterError("config: max_text_len must be >= 1");
    }

    bool operator==(const SurrogateConfig&) const = default;
};

// The reference configuration: 64x64x3 input, 8x8 patches (64 + CLS tokens),
// depth 12 in both towers so the {7, 9, 11} layer set applies directly.
inline SurrogateConfig reference_config(std::uint64_t seed = 7) {
    SurrogateConfig c;
    c.seed = seed;
    return c;
}

struct AttentionWeights {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct BlockWeights {
    Tensor ln1_gamma, ln1_beta;
    AttentionWeights attn;
    Tensor ln2_gamma, ln2_beta;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct TowerWeights {
    std::vector<BlockWeights> blocks;
    Tensor final_gamma, final_beta;
};

struct SurrogateModel {
    SurrogateConfig config;
    Tensor patch_weight;      // {patch_features, width}
    Tensor patch_bias;        // {width}
    Tensor cls_token;         // {1, width}
    Tensor pos_image;         // {seq_len, width}
    TowerWeights image_tower;
    Tensor visual_projection; // {width, proj_dim}
    Tensor token_embedding;   // {vocab, width}
    Tensor pos_text;          // {max_text_len, width}
    TowerWeights text_tower;
    Tensor text_projection;   // {width, proj_dim}
};

// Per-layer image features: CLS token, patch-token matrix, and the mean of
// the patch rows. Captured after the block's residual addition, before the
// tower's final layer normalization.
struct LayerFeatureBundle {
    int layer_index = 0;
    Tensor cls;     // {width}
    Tensor patches; // {num_patches, width}
    Tensor pooled;  // {width}
};

struct TextLayerFeature {
    int layer_index = 0;
    Tensor eos; // {width}
};

namespace detail {

enum class InitKind { Uniform, One, Zero };

// fn(name, tensor, kind, fan_in) for every weight tensor, in the order they
// are drawn from the PRNG and written to disk.
template <typename ModelT, typename Fn>
void for_each_weight(ModelT& m, Fn&& fn) {
    const auto& c = m.config;
    const double w = static_cast<double>(c.width);
    const double pf = static_cast<double>(c.patch_features());
    const double mlp = static_cast<double>(c.mlp_dim());

    auto tower = [&](const char* prefix, auto& tw, std::size_t depth) {
        for (std::size_t i = 0; i < depth; ++i) {
            auto& b = tw.blocks[i];
            const std::string p = std::string(prefix) + ".block" + std::to_string(i) + ".";
            fn(p + "ln1.gamma", b.ln1_gamma, InitKind::One, w);
            fn(p + "ln1.beta", b.ln1_beta, InitKind::Zero, w);
            fn(p + "attn.q.weight", b.attn.wq, InitKind::Uniform, w);
            fn(p + "attn.q.bias", b.attn.bq, InitKind::Uniform, w);
            fn(p + "attn.k.weight", b.attn.wk, InitKind::Uniform, w);
            fn(p + "attn.k.bias", b.attn.bk, InitKind::Uniform, w);
            fn(p + "attn.v.weight", b.attn.wv, InitKind::Uniform, w);
            fn(p + "attn.v.bias", b.attn.bv, InitKind::Uniform, w);
            fn(p + "attn.out.weight", b.attn.wo, InitKind::Uniform, w);
            fn(p + "attn.out.bias", b.attn.bo, InitKind::Uniform, w);
            fn(p + "ln2.gamma", b.ln2_gamma, InitKind::One, w);
            fn(p + "ln2.beta", b.ln2_beta, InitKind::Zero, w);
            fn(p + "mlp.fc1.weight", b.mlp_w1, InitKind::Uniform, w);
            fn(p + "mlp.fc1.bias", b.mlp_b1, InitKind::Uniform, w);
            fn(p + "mlp.fc2.weight", b.mlp_w2, InitKind::Uniform, mlp);
            fn(p + "mlp.fc2.bias", b.mlp_b2, InitKind::Uniform, mlp);
        }
        fn(std::string(prefix) + ".ln_final.gamma", tw.final_gamma, InitKind::One, w);
        fn(std::string(prefix) + ".ln_final.beta", tw.final_beta, InitKind::Zero, w);
    };

    fn("visual.patch_embed.weight", m.patch_weight, InitKind::Uniform, pf);
    fn("visual.patch_embed.bias", m.patch_bias, InitKind::Uniform, pf);
    fn("visual.cls_token", m.cls_token, InitKind::Uniform, w);
    fn("visual.pos_embed", m.pos_image, InitKind::Uniform, w);
    tower("visual", m.image_tower, c.depth_img);
    fn("visual.projection", m.visual_projection, InitKind::Uniform, w);
    fn("text.token_embed", m.token_embedding, InitKind::Uniform, w);
    fn("text.pos_embed", m.pos_text, InitKind::Uniform, w);
    tower("text", m.text_tower, c.depth_txt);
    fn("text.projection", m.text_projection, InitKind::Uniform, w);
}

inline void allocate_weights(SurrogateModel& m) {
    const auto& c = m.config;
    const std::size_t w = c.width;
    auto block = [&]() {
        BlockWeights b;
        b.ln1_gamma = Tensor::vector(w);
        b.ln1_beta = Tensor::vector(w);
        b.attn = {Tensor::matrix(w, w), Tensor::vector(w), Tensor::matrix(w, w), Tensor::vector(w),
                  Tensor::matrix(w, w), Tensor::vector(w), Tensor::matrix(w, w), Tensor::vector(w)};
        b.ln2_gamma = Tensor::vector(w);
        b.ln2_beta = Tensor::vector(w);
        b.mlp_w1 = Tensor::matrix(w, c.mlp_dim());
        b.mlp_b1 = Tensor::vector(c.mlp_dim());
        b.mlp_w2 = Tensor::matrix(c.mlp_dim(), w);
        b.mlp_b2 = Tensor::vector(w);
        return b;
    };
    m.patch_weight = Tensor::matrix(c.patch_features(), w);
    m.patch_bias = Tensor::vector(w);
    m.cls_token = Tensor::matrix(1, w);
    m.pos_image = Tensor::matrix(c.seq_len(), w);
    m.image_tower.blocks.assign(c.depth_img, BlockWeights{});
    for (auto& b : m.image_tower.blocks) b = block();
    m.image_tower.final_gamma = Tensor::vector(w);
    m.image_tower.final_beta = Tensor::vector(w);
    m.visual_projection = Tensor::matrix(w, c.proj_dim);
    m.token_embedding = Tensor::matrix(c.vocab_size, w);
    m.pos_text = Tensor::matrix(c.max_text_len, w);
    m.text_tower.blocks.assign(c.depth_txt, BlockWeights{});
    for (auto& b : m.text_tower.blocks) b = block();
    m.text_tower.final_gamma = Tensor::vector(w);
    m.text_tower.final_beta = Tensor::vector(w);
    m.text_projection = Tensor::matrix(w, c.proj_dim);
}

inline double layer_norm_eps() { return ad::detail::kLayerNormEps; }

} // namespace detail

// Deterministic model construction: one SplitMix64 stream keyed by the seed,
// tensors drawn in serialization order, elements row-major, each element one
// draw scaled to [-1/sqrt(fan_in), 1/sqrt(fan_in)) and quantized through
// 32-bit float. Layer-norm parameters are 1 / 0 and consume no draws.
inline SurrogateModel init_model(const SurrogateConfig& config) {
    config.validate();
    SurrogateModel m;
    m.config = config;
    detail::allocate_weights(m);
    SplitMix64 rng(config.seed);
    detail::for_each_weight(m, [&](const std::string&, Tensor& t, detail::InitKind kind, double fan_in) {
        switch (kind) {
        case detail::InitKind::One:
            t.fill(1.0);
            break;
        case detail::InitKind::Zero:
            t.fill(0.0);
            break;
        case detail::InitKind::Uniform: {
            const double bound = 1.0 / std::sqrt(fan_in);
            for (double& v : t.values())
                v = static_cast<double>(static_cast<float>(rng.next_symmetric(bound)));
            break;
        }
        }
    });
    return m;
}

// ---- tokenization ----

// Byte-level tokens: BOS, then the UTF-8 bytes of the text, then EOS.
inline std::vector<int> tokenize_bytes(std::string_view text, const SurrogateConfig& config) {
    if (text.size() + 2 > config.max_text_len)
        throw ParameterError("tokenize: text longer than max_text_len - 2 bytes");
    std::vector<int> tokens;
    tokens.reserve(text.size() + 2);
    tokens.push_back(config.bos_id());
    for (unsigned char b : text) tokens.push_back(static_cast<int>(b));
    tokens.push_back(config.eos_id());
    return tokens;
}

// Text-tower depth corresponding to an image-tower layer. Identity when the
// depths match, otherwise proportional with round-half-up, clamped to range.
inline int text_layer_for(const SurrogateConfig& config, int image_layer) {
    if (config.depth_txt == config.depth_img) return image_layer;
    const double mapped = static_cast<double>(image_layer) *
                          static_cast<double>(config.depth_txt) /
                          static_cast<double>(config.depth_img);
    auto l = static_cast<int>(std::floor(mapped + 0.5));
    return std::clamp(l, 1, static_cast<int>(config.depth_txt));
}

// ---- tape-level forward passes ----

namespace graph {

struct BlockNodes {
    ad::NodeId ln1_gamma, ln1_beta;
    ad::NodeId wq, bq, wk, bk, wv, bv, wo, bo;
    ad::NodeId ln2_gamma, ln2_beta;
    ad::NodeId mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct TowerNodes {
    std::vector<BlockNodes> blocks;
    ad::NodeId final_gamma, final_beta;
};

inline TowerNodes upload_tower(ad::Tape& tape, const TowerWeights& tw) {
    TowerNodes n;
    n.blocks.reserve(tw.blocks.size());
    for (const auto& b : tw.blocks) {
        BlockNodes bn;
        bn.ln1_gamma = tape.constant(b.ln1_gamma);
        bn.ln1_beta = tape.constant(b.ln1_beta);
        bn.wq = tape.constant(b.attn.wq);
        bn.bq = tape.constant(b.attn.bq);
        bn.wk = tape.constant(b.attn.wk);
        bn.bk = tape.constant(b.attn.bk);
        bn.wv = tape.constant(b.attn.wv);
        bn.bv = tape.constant(b.attn.bv);
        bn.wo = tape.constant(b.attn.wo);
        bn.bo = tape.constant(b.attn.bo);
        bn.ln2_gamma = tape.constant(b.ln2_gamma);
        bn.ln2_beta = tape.constant(b.ln2_beta);
        bn.mlp_w1 = tape.constant(b.mlp_w1);
        bn.mlp_b1 = tape.constant(b.mlp_b1);
        bn.mlp_w2 = tape.constant(b.mlp_w2);
        bn.mlp_b2 = tape.constant(b.mlp_b2);
        n.blocks.push_back(bn);
    }
    n.final_gamma = tape.constant(tw.final_gamma);
    n.final_beta = tape.constant(tw.final_beta);
    return n;
}

// Pre-LN transformer block: x + attn(ln1(x)), then + mlp(ln2(.)).
inline ad::NodeId transformer_block(ad::Tape& t, ad::NodeId x, const BlockNodes& b,
                                    std::size_t heads, bool causal) {
    const std::size_t width = t.value(x).cols();
    const std::size_t hd = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    ad::NodeId h = t.layer_norm(x, b.ln1_gamma, b.ln1_beta);
    ad::NodeId q = t.add_rowvec(t.matmul(h, b.wq), b.bq);
    ad::NodeId k = t.add_rowvec(t.matmul(h, b.wk), b.bk);
    ad::NodeId v = t.add_rowvec(t.matmul(h, b.wv), b.bv);

    std::vector<ad::NodeId> head_outputs;
    head_outputs.reserve(heads);
    for (std::size_t i = 0; i < heads; ++i) {
        ad::NodeId qh = t.slice_cols(q, i * hd, hd);
        ad::NodeId kh = t.slice_cols(k, i * hd, hd);
        ad::NodeId vh = t.slice_cols(v, i * hd, hd);
        ad::NodeId scores = t.scale(t.matmul_nt(qh, kh), scale);
        ad::NodeId att = t.softmax_rows(scores, causal);
        head_outputs.push_back(t.matmul(att, vh));
    }
    ad::NodeId merged = t.concat_cols(head_outputs);
    ad::NodeId attn_out = t.add_rowvec(t.matmul(merged, b.wo), b.bo);
    ad::NodeId x1 = t.add(x, attn_out);

    ad::NodeId h2 = t.layer_norm(x1, b.ln2_gamma, b.ln2_beta);
    ad::NodeId mid = t.gelu(t.add_rowvec(t.matmul(h2, b.mlp_w1), b.mlp_b1));
    ad::NodeId mlp_out = t.add_rowvec(t.matmul(mid, b.mlp_w2), b.mlp_b2);
    return t.add(x1, mlp_out);
}

struct ImageTapNodes {
    int layer_index = 0;
    ad::NodeId cls = 0;
    ad::NodeId patches = 0;
    ad::NodeId pooled = 0;
};

struct ImageGraph {
    ad::NodeId embedding = 0;     // {proj_dim}
    ad::NodeId projection = 0;    // visual projection constant, for reuse
    ad::NodeId final_gamma = 0;
    ad::NodeId final_beta = 0;
    std::vector<ImageTapNodes> taps;
};

inline void check_tap_layers(std::span<const int> layers, std::size_t depth) {
    for (int l : layers)
        if (l < 1 || static_cast<std::size_t>(l) > depth)
            throw ParameterError("tap layer " + std::to_string(l) + " out of range [1, " +
                                 std::to_string(depth) + "]");
}

// Image tower forward on the tape. Taps are recorded after each requested
// block, pre final layer norm; the embedding applies the final layer norm to
// the CLS row at full depth and then the visual projection.
inline ImageGraph encode_image_graph(ad::Tape& t, const SurrogateModel& m, ad::NodeId image,
                                     std::span<const int> tap_layers) {
    const auto& c = m.config;
    if (t.value(image).dims() != std::vector<std::size_t>{c.image_size, c.image_size, 3})
        throw ParameterError("encode_image: image dims do not match model config");
    check_tap_layers(tap_layers, c.depth_img);

    TowerNodes tower = upload_tower(t, m.image_tower);
    ad::NodeId patch_w = t.constant(m.patch_weight);
    ad::NodeId patch_b = t.constant(m.patch_bias);
    ad::NodeId cls_tok = t.constant(m.cls_token);
    ad::NodeId pos = t.constant(m.pos_image);

    ad::NodeId patches = t.extract_patches(image, c.patch_size);
    ad::NodeId embedded = t.add_rowvec(t.matmul(patches, patch_w), patch_b);
    ad::NodeId x = t.add(t.concat_rows(cls_tok, embedded), pos);

    ImageGraph g;
    for (std::size_t l = 1; l <= c.depth_img; ++l) {
        x = transformer_block(t, x, tower.blocks[l - 1], c.heads, /*causal=*/false);
        for (int req : tap_layers) {
            if (static_cast<std::size_t>(req) != l) continue;
            ImageTapNodes tap;
            tap.layer_index = req;
            tap.cls = t.row(x, 0);
            tap.patches = t.slice_rows(x, 1, c.num_patches());
            tap.pooled = t.mean_rows(tap.patches);
            g.taps.push_back(tap);
        }
    }
    ad::NodeId cls_final = t.row(x, 0);
    ad::NodeId normed = t.layer_norm(cls_final, tower.final_gamma, tower.final_beta);
    g.projection = t.constant(m.visual_projection);
    g.final_gamma = tower.final_gamma;
    g.final_beta = tower.final_beta;
    g.embedding = t.vecmat(normed, g.projection);
    return g;
}

struct TextGraph {
    ad::NodeId embedding = 0;
    std::vector<std::pair<int, ad::NodeId>> taps; // (layer, eos node)
};

inline TextGraph encode_text_graph(ad::Tape& t, const SurrogateModel& m,
                                   std::span<const int> tokens,
                                   std::span<const int> tap_layers) {
    const auto& c = m.config;
    if (tokens.empty())
        throw ParameterError("encode_text: empty token sequence");
    if (tokens.size() > c.max_text_len)
        throw ParameterError("encode_text: sequence longer than max_text_len");
    for (int id : tokens)
        if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size)
            throw ParameterError("encode_text: token id out of vocabulary");
    if (tokens.back() != c.eos_id())
        throw ParameterError("encode_text: sequence must end with the EOS id");
    check_tap_layers(tap_layers, c.depth_txt);

    const std::size_t len = tokens.size();
    Tensor x0 = Tensor::matrix(len, c.width);
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < c.width; ++j)
            x0.at(i, j) = m.token_embedding.at(static_cast<std::size_t>(tokens[i]), j) +
                          m.pos_text.at(i, j);

    TowerNodes tower = upload_tower(t, m.text_tower);
    ad::NodeId x = t.constant(std::move(x0));

    TextGraph g;
    const std::size_t eos_pos = len - 1;
    for (std::size_t l = 1; l <= c.depth_txt; ++l) {
        x = transformer_block(t, x, tower.blocks[l - 1], c.heads, /*causal=*/true);
        for (int req : tap_layers)
            if (static_cast<std::size_t>(req) == l)
                g.taps.emplace_back(req, t.row(x, eos_pos));
    }
    ad::NodeId eos_final = t.row(x, eos_pos);
    ad::NodeId normed = t.layer_norm(eos_final, tower.final_gamma, tower.final_beta);
    g.embedding = t.vecmat(normed, t.constant(m.text_projection));
    return g;
}

} // namespace graph

// ---- plain (value-level) encoder API ----

struct ImageEncoding {
    Tensor embedding; // {proj_dim}
    std::vector<LayerFeatureBundle> taps;
};

inline ImageEncoding encode_image(const SurrogateModel& m, const Tensor& image,
                                  std::span<const int> tap_layers = {}) {
    ad::Tape t;
    ad::NodeId img = t.constant(image);
    graph::ImageGraph g = graph::encode_image_graph(t, m, img, tap_layers);
    ImageEncoding out;
    out.embedding = t.value(g.embedding);
    for (const auto& tap : g.taps) {
        LayerFeatureBundle b;
        b.layer_index = tap.layer_index;
        b.cls = t.value(tap.cls);
        b.patches = t.value(tap.patches);
        b.pooled = t.value(tap.pooled);
#ifndef NDEBUG
        Tensor check = mean_pool_rows(b.patches);
        for (std::size_t i = 0; i < check.size(); ++i) assert(check[i] == b.pooled[i]);
#endif
        out.taps.push_back(std::move(b));
    }
    return out;
}

struct TextEncoding {
    Tensor embedding; // {proj_dim}
    std::vector<TextLayerFeature> taps;
};

inline TextEncoding encode_text(const SurrogateModel& m, std::span<const int> tokens,
                                std::span<const int> tap_layers = {}) {
    ad::Tape t;
    graph::TextGraph g = graph::encode_text_graph(t, m, tokens, tap_layers);
    TextEncoding out;
    out.embedding = t.value(g.embedding);
    for (const auto& [layer, node] : g.taps)
        out.taps.push_back(TextLayerFeature{layer, t.value(node)});
    return out;
}

// Linear projections into the shared subspace.
inline Tensor project_visual(const SurrogateModel& m, const Tensor& f) {
    if (f.rank() != 1 || f.size() != m.config.width)
        throw ParameterError("project_visual: width-vector required");
    Tensor out = Tensor::vector(m.config.proj_dim);
    for (std::size_t k = 0; k < m.config.width; ++k)
        for (std::size_t j = 0; j < m.config.proj_dim; ++j)
            out[j] += f[k] * m.visual_projection.at(k, j);
    return out;
}

inline Tensor project_text(const SurrogateModel& m, const Tensor& f) {
    if (f.rank() != 1 || f.size() != m.config.width)
        throw ParameterError("project_text: width-vector required");
    Tensor out = Tensor::vector(m.config.proj_dim);
    for (std::size_t k = 0; k < m.config.width; ++k)
        for (std::size_t j = 0; j < m.config.proj_dim; ++j)
            out[j] += f[k] * m.text_projection.at(k, j);
    return out;
}

namespace detail {
inline Tensor layer_norm_plain(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    const std::size_t d = x.size();
    double mean = 0.0;
    for (double v : x.values()) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : x.values()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + layer_norm_eps());
    Tensor out = Tensor::vector(d);
    for (std::size_t i = 0; i < d; ++i)
        out[i] = (x[i] - mean) * inv * gamma[i] + beta[i];
    return out;
}
} // namespace detail

// The tower's final layer-norm applied to an intermediate feature vector.
// Used before projecting intermediate CLS / EOS features into the shared
// subspace, matching how the final layer feeds the same projection matrix.
inline Tensor final_visual_layer_norm(const SurrogateModel& m, const Tensor& f) {
    if (f.rank() != 1 || f.size() != m.config.width)
        throw ParameterError("final_visual_layer_norm: width-vector required");
    return detail::layer_norm_plain(f, m.image_tower.final_gamma, m.image_tower.final_beta);
}

inline Tensor final_text_layer_norm(const SurrogateModel& m, const Tensor& f) {
    if (f.rank() != 1 || f.size() != m.config.width)
        throw ParameterError("final_text_layer_norm: width-vector required");
    return detail::layer_norm_plain(f, m.text_tower.final_gamma, m.text_tower.final_beta);
}

// ---- weight file format ----
//
// Little-endian binary: magic "SGHW", version u32, tensor count u32; per
// tensor: name length u32, UTF-8 name, rank u32, extents u64 each, then raw
// 32-bit floats row-major. The first tensor is named "config" and carries
// [image_size, patch_size, depth_img, depth_txt, width, heads, proj_dim,
// vocab_size, max_text_len, seed&0xFFFF, (seed>>16)&0xFFFF, (seed>>32)&0xFFFF,
// (seed>>48)&0xFFFF]; the seed is split into 16-bit chunks so every entry is
// exactly representable as a float. Weight tensors follow in the order
// defined by for_each_weight. Round trips are bit-exact because weights are
// float-quantized at creation.

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "weight file I/O assumes a little-endian host");

inline constexpr char kWeightMagic[4] = {'S', 'G', 'H', 'W'};
inline constexpr std::uint32_t kWeightVersion = 1;

struct WeightWriter {
    std::vector<unsigned char> bytes;

    void raw(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        bytes.insert(bytes.end(), c, c + n);
    }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }

    void tensor(const std::string& name, const Tensor& t) {
        u32(static_cast<std::uint32_t>(name.size()));
        raw(name.data(), name.size());
        u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.dims()) u64(d);
        for (double v : t.values()) {
            float f = static_cast<float>(v);
            raw(&f, 4);
        }
    }
};

struct WeightReader {
    const std::vector<unsigned char>& bytes;
    std::size_t pos = 0;

    void raw(void* p, std::size_t n) {
        if (bytes.size() - pos < n)
            throw TruncatedFileError("weight file ends prematurely");
        std::memcpy(p, bytes.data() + pos, n);
        pos += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, 8);
        return v;
    }

    std::pair<std::string, Tensor> tensor() {
        const std::uint32_t name_len = u32();
        if (name_len > 4096) throw TensorHeaderError("implausible tensor name length");
        std::string name(name_len, '\0');
        raw(name.data(), name_len);
        const std::uint32_t rank = u32();
        if (rank == 0 || rank > 8) throw TensorHeaderError("implausible tensor rank: " + name);
        std::vector<std::size_t> dims(rank);
        std::size_t total = 1;
        for (auto& d : dims) {
            d = static_cast<std::size_t>(u64());
            if (d == 0 || total > (std::size_t{1} << 28) / d)
                throw TensorHeaderError("implausible tensor extents: " + name);
            total *= d;
        }
        std::vector<double> data(total);
        for (auto& v : data) {
            float f;
            raw(&f, 4);
            v = static_cast<double>(f);
        }
        return {std::move(name), Tensor(std::move(dims), std::move(data))};
    }
};

inline Tensor config_tensor(const SurrogateConfig& c) {
    Tensor t = Tensor::vector(13);
    t[0] = static_cast<double>(c.image_size);
    t[1] = static_cast<double>(c.patch_size);
    t[2] = static_cast<double>(c.depth_img);
    t[3] = static_cast<double>(c.depth_txt);
    t[4] = static_cast<double>(c.width);
    t[5] = static_cast<double>(c.heads);
    t[6] = static_cast<double>(c.proj_dim);
    t[7] = static_cast<double>(c.vocab_size);
    t[8] = static_cast<double>(c.max_text_len);
    for (int i = 0; i < 4; ++i)
        t[9 + i] = static_cast<double>((c.seed >> (16 * i)) & 0xFFFFu);
    return t;
}

inline SurrogateConfig config_from_tensor(const Tensor& t) {
    if (t.rank() != 1 || t.size() != 13)
        throw TensorHeaderError("config tensor must have 13 entries");
    auto field = [&](std::size_t i) { return static_cast<std::size_t>(t[i]); };
    SurrogateConfig c;
    c.image_size = field(0);
    c.patch_size = field(1);
    c.depth_img = field(2);
    c.depth_txt = field(3);
    c.width = field(4);
    c.heads = field(5);
    c.proj_dim = field(6);
    c.vocab_size = field(7);
    c.max_text_len = field(8);
    c.seed = 0;
    for (int i = 0; i < 4; ++i)
        c.seed |= static_cast<std::uint64_t>(t[9 + i]) << (16 * i);
    return c;
}

} // namespace detail

inline std::vector<unsigned char> serialize_weights(const SurrogateModel& m) {
    detail::WeightWriter w;
    w.raw(detail::kWeightMagic, 4);
    w.u32(detail::kWeightVersion);

    std::uint32_t count = 1;
    detail::for_each_weight(const_cast<SurrogateModel&>(m),
                            [&](const std::string&, Tensor&, detail::InitKind, double) { ++count; });
    w.u32(count);
    w.tensor("config", detail::config_tensor(m.config));
    detail::for_each_weight(const_cast<SurrogateModel&>(m),
                            [&](const std::string& name, Tensor& t, detail::InitKind, double) {
                                w.tensor(name, t);
                            });
    return std::move(w.bytes);
}

inline void save_weights(const SurrogateModel& m, const std::string& path) {
    auto bytes = serialize_weights(m);
    write_file_atomic(path, bytes.data(), bytes.size());
}

inline SurrogateModel deserialize_weights(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), detail::kWeightMagic, 4) != 0)
        throw BadMagicError("not a surrogate weight file (bad magic)");
    detail::WeightReader r{bytes, 4};
    const std::uint32_t version = r.u32();
    if (version != detail::kWeightVersion)
        throw VersionMismatchError("unsupported weight file version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    if (count < 1) throw TensorHeaderError("weight file declares no tensors");

    auto [config_name, config_values] = r.tensor();
    if (config_name != "config")
        throw TensorHeaderError("first tensor must be 'config', found '" + config_name + "'");
    SurrogateConfig config = detail::config_from_tensor(config_values);
    config.validate();

    SurrogateModel m;
    m.config = config;
    detail::allocate_weights(m);

    std::uint32_t consumed = 1;
    detail::for_each_weight(m, [&](const std::string& name, Tensor& t, detail::InitKind, double) {
        if (consumed >= count)
            throw TruncatedFileError("weight file declares fewer tensors than the model needs");
        auto [got_name, got] = r.tensor();
        ++consumed;
        if (got_name != name)
            throw TensorHeaderError("expected tensor '" + name + "', found '" + got_name + "'");
        if (got.dims() != t.dims())
            throw TensorHeaderError("tensor '" + name + "' has extents " + got.dims_string() +
                                    ", expected " + t.dims_string());
        t = std::move(got);
    });
    if (consumed != count)
        throw TensorHeaderError("weight file declares more tensors than the model uses");
    if (r.pos != bytes.size())
        throw TensorHeaderError("trailing bytes after the last declared tensor");
    return m;
}

inline SurrogateModel load_weights(const std::string& path) {
    return deserialize_weights(read_file_bytes(path));
}

// FNV-1a over the raw bytes of every weight tensor; used by immutability and
// detachment checks.
inline std::uint64_t model_checksum(const SurrogateModel& m) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    auto mix = [&](const Tensor& t) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
        for (std::size_t i = 0; i < t.size() * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 0x100000001B3ull;
        }
    };
    detail::for_each_weight(const_cast<SurrogateModel&>(m),
                            [&](const std::string&, Tensor& t, detail::InitKind, double) { mix(t); });
    return h;
}

} // namespace tta
