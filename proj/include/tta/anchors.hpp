#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tta/errors.hpp"
#include "tta/image_io.hpp"
#include "tta/numerics.hpp"
#include "tta/prng.hpp"
#include "tta/surrogate.hpp"
#include "tta/tensor.hpp"

// Anchor selection: ingest a reference pool from disk, pick the Top-K images
// by similarity to the target text under the surrogate, weight them with a
// temperature softmax, and precompute the per-layer weighted targets. All
// targets are computed once and never receive gradients afterwards.
namespace tta {

struct PoolEntry {
    std::string id; // file name within the pool directory
    Tensor image;
};

struct ReferencePool {
    std::vector<PoolEntry> entries;
    std::string source_dir;
};

// Reads every .ppm in dir, ordered by file name. Dimensions are checked
// against expected_dims; the error names the offending file.
inline ReferencePool load_pool(const std::string& dir,
                               const std::vector<std::size_t>& expected_dims) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir))
        throw ImageIoError("pool directory does not exist: " + dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".ppm")
            names.push_back(entry.path().filename().string());
    }
    if (names.empty())
        throw ImageIoError("pool directory contains no .ppm images: " + dir);
    std::sort(names.begin(), names.end());

    ReferencePool pool;
    pool.source_dir = dir;
    for (const auto& name : names) {
        Tensor image = read_ppm((fs::path(dir) / name).string());
        if (image.dims() != expected_dims)
            throw ImageIoError("pool image '" + name + "' has dims " + image.dims_string() +
                               ", expected " + Tensor(expected_dims).dims_string());
        pool.entries.push_back(PoolEntry{name, std::move(image)});
    }
    return pool;
}

// Procedural stand-in for a text-to-image reference pool: a seeded linear
// color gradient, a few geometric motifs, and light pixel noise.
inline Tensor synthesize_pool_image(std::uint64_t seed, std::size_t index, std::size_t size) {
    SplitMix64 seeder(seed);
    for (std::size_t i = 0; i <= index; ++i) seeder.next();
    SplitMix64 rng(seeder.next() ^ (index * 0x9E3779B97F4A7C15ull));

    Tensor image({size, size, 3});
    double c0[3], c1[3];
    for (double& v : c0) v = rng.next_unit();
    for (double& v : c1) v = rng.next_unit();
    const double angle = rng.next_unit() * 6.283185307179586;
    const double dx = std::cos(angle), dy = std::sin(angle);

    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double u = (static_cast<double>(x) / size - 0.5) * dx +
                             (static_cast<double>(y) / size - 0.5) * dy + 0.5;
            const double t = std::clamp(u, 0.0, 1.0);
            for (std::size_t c = 0; c < 3; ++c)
                image[(y * size + x) * 3 + c] = (1.0 - t) * c0[c] + t * c1[c];
        }

    const std::size_t motifs = 2 + rng.next_below(3);
    for (std::size_t n = 0; n < motifs; ++n) {
        const std::uint64_t kind = rng.next_below(3);
        double color[3];
        for (double& v : color) v = rng.next_unit();
        const double mx = rng.next_unit() * size;
        const double my = rng.next_unit() * size;
        const double radius = (0.08 + 0.22 * rng.next_unit()) * size;
        const double stripe = 4.0 + rng.next_unit() * 12.0;
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                bool inside = false;
                if (kind == 0) { // disc
                    const double ddx = x - mx, ddy = y - my;
                    inside = ddx * ddx + ddy * ddy <= radius * radius;
                } else if (kind == 1) { // axis-aligned square
                    inside = std::fabs(x - mx) <= radius && std::fabs(y - my) <= radius;
                } else { // diagonal stripes
                    inside = std::fmod(x + y + mx, 2.0 * stripe) < stripe;
                }
                if (!inside) continue;
                for (std::size_t c = 0; c < 3; ++c) {
                    double& v = image[(y * size + x) * 3 + c];
                    v = 0.35 * v + 0.65 * color[c];
                }
            }
    }

    for (double& v : image.values())
        v = std::clamp(v + rng.next_symmetric(0.03), 0.0, 1.0);
    return image;
}

struct ScoredAnchor {
    std::string id;
    std::size_t pool_index = 0;
    double similarity = 0.0;
};

// Top-K pool entries by cos(image embedding, text embedding), descending,
// ties broken by ascending id. K must not exceed the pool size.
inline std::vector<ScoredAnchor> select_topk(const ReferencePool& pool, const SurrogateModel& model,
                                             std::span<const int> target_tokens, std::size_t k) {
    if (pool.entries.empty())
        throw ParameterError("select_topk: empty pool");
    if (k < 1 || k > pool.entries.size())
        throw ParameterError("select_topk: K must be in [1, pool size], got " + std::to_string(k) +
                             " for pool of " + std::to_string(pool.entries.size()));
    const Tensor text = encode_text(model, target_tokens).embedding;
    std::vector<ScoredAnchor> scored;
    scored.reserve(pool.entries.size());
    for (std::size_t i = 0; i < pool.entries.size(); ++i) {
        const Tensor emb = encode_image(model, pool.entries[i].image).embedding;
        scored.push_back(ScoredAnchor{pool.entries[i].id, i, cosine_similarity(emb, text)});
    }
    std::sort(scored.begin(), scored.end(), [](const ScoredAnchor& a, const ScoredAnchor& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.id < b.id;
    });
    scored.resize(k);
    return scored;
}

// Anchor weights: temperature softmax over similarities, order preserved.
inline std::vector<double> compute_weights(std::span<const double> similarities, double tau) {
    return softmax_temperature(similarities, tau);
}

struct LayerTarget {
    Tensor cls_target;    // {width}
    Tensor pooled_target; // {width}
};

struct AnchorSet {
    std::vector<std::string> ids;               // descending similarity order
    std::vector<Tensor> images;                 // anchor images, same order
    std::vector<double> similarities;
    std::vector<double> weights;
    std::vector<Tensor> embedding_targets;      // per anchor, detached
    std::map<int, LayerTarget> layer_targets;   // per configured layer, detached
};

// Weighted per-layer targets over a fixed anchor list: layer target =
// sum_k w_k * features_k, kept as separate CLS and pooled components.
inline std::map<int, LayerTarget> weighted_layer_targets(const SurrogateModel& model,
                                                         std::span<const Tensor> images,
                                                         std::span<const double> weights,
                                                         std::span<const int> layers) {
    if (images.size() != weights.size())
        throw ParameterError("layer targets: one weight per anchor required");
    const std::size_t width = model.config.width;
    std::map<int, LayerTarget> targets;
    for (int l : layers)
        targets[l] = LayerTarget{Tensor::vector(width), Tensor::vector(width)};
    for (std::size_t a = 0; a < images.size(); ++a) {
        ImageEncoding enc = encode_image(model, images[a], layers);
        const double w = weights[a];
        for (const auto& tap : enc.taps) {
            LayerTarget& target = targets.at(tap.layer_index);
            for (std::size_t i = 0; i < width; ++i) {
                target.cls_target[i] += w * tap.cls[i];
                target.pooled_target[i] += w * tap.pooled[i];
            }
        }
    }
    return targets;
}

// Builds the full anchor set: Top-K selection, softmax weights, per-anchor
// embeddings, and the weighted per-layer CLS / pooled targets.
inline AnchorSet build_anchor_set(const ReferencePool& pool, const SurrogateModel& model,
                                  std::span<const int> target_tokens, std::size_t k, double tau,
                                  std::span<const int> layers) {
    auto selected = select_topk(pool, model, target_tokens, k);
    AnchorSet set;
    std::vector<double> sims;
    for (const auto& s : selected) {
        set.ids.push_back(s.id);
        set.images.push_back(pool.entries[s.pool_index].image);
        sims.push_back(s.similarity);
    }
    set.similarities = sims;
    set.weights = compute_weights(sims, tau);
    set.layer_targets = weighted_layer_targets(model, set.images, set.weights, layers);
    for (const auto& image : set.images)
        set.embedding_targets.push_back(encode_image(model, image).embedding);
    return set;
}

// FNV-1a over every numeric field; used to verify the "computed once and
// detached" contract (the attack must never mutate its anchor set).
inline std::uint64_t anchor_set_checksum(const AnchorSet& set) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    auto mix_bytes = [&](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001B3ull;
        }
    };
    auto mix_tensor = [&](const Tensor& t) { mix_bytes(t.data(), t.size() * sizeof(double)); };
    for (const auto& id : set.ids) mix_bytes(id.data(), id.size());
    for (const auto& img : set.images) mix_tensor(img);
    mix_bytes(set.similarities.data(), set.similarities.size() * sizeof(double));
    mix_bytes(set.weights.data(), set.weights.size() * sizeof(double));
    for (const auto& t : set.embedding_targets) mix_tensor(t);
    for (const auto& [layer, target] : set.layer_targets) {
        mix_bytes(&layer, sizeof(layer));
        mix_tensor(target.cls_target);
        mix_tensor(target.pooled_target);
    }
    return h;
}

// Audit manifest: header comments echoing K and tau, then one CSV line per
// anchor (id, similarity, weight), full round-trip precision.
inline std::string anchor_manifest(const AnchorSet& set, std::size_t k, double tau) {
    char buf[128];
    std::string out;
    std::snprintf(buf, sizeof(buf), "# K = %zu\n", k);
    out += buf;
    std::snprintf(buf, sizeof(buf), "# tau = %.17g\n", tau);
    out += buf;
    out += "id,similarity,weight\n";
    for (std::size_t i = 0; i < set.ids.size(); ++i) {
        std::snprintf(buf, sizeof(buf), ",%.17g,%.17g\n", set.similarities[i], set.weights[i]);
        out += set.ids[i];
        out += buf;
    }
    return out;
}

} // namespace tta
