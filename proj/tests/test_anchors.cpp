#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "tta/anchors.hpp"
#include "tta/image_io.hpp"
#include "tta/numerics.hpp"

using namespace tta;

namespace {

SurrogateConfig mini_config(std::uint64_t seed = 42) {
    SurrogateConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    c.depth_img = 3;
    c.depth_txt = 3;
    c.width = 16;
    c.heads = 2;
    c.proj_dim = 8;
    c.vocab_size = 259;
    c.max_text_len = 24;
    c.seed = seed;
    return c;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name) : path(name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

ReferencePool synthetic_pool(std::size_t count, std::uint64_t seed, std::size_t size) {
    ReferencePool pool;
    pool.source_dir = "<memory>";
    for (std::size_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "pool_%04zu.ppm", i);
        pool.entries.push_back(PoolEntry{name, synthesize_pool_image(seed, i, size)});
    }
    return pool;
}

} // namespace

TEST_CASE("load_pool reads sorted, dimension-checked images") {
    TempDir dir("pool_load_test");
    for (int i : {2, 0, 1}) {
        Tensor img({16, 16, 3});
        img.fill(0.1 * (i + 1));
        write_ppm(img, (dir.path / ("img_" + std::to_string(i) + ".ppm")).string());
    }
    ReferencePool pool = load_pool(dir.path.string(), {16, 16, 3});
    REQUIRE(pool.entries.size() == 3);
    CHECK(pool.entries[0].id == "img_0.ppm");
    CHECK(pool.entries[1].id == "img_1.ppm");
    CHECK(pool.entries[2].id == "img_2.ppm");
}

TEST_CASE("load_pool error cases") {
    TempDir dir("pool_err_test");
    CHECK_THROWS_AS(load_pool(dir.path.string(), {16, 16, 3}), ImageIoError);

    Tensor small({8, 8, 3});
    small.fill(0.5);
    write_ppm(small, (dir.path / "wrong_size.ppm").string());
    try {
        load_pool(dir.path.string(), {16, 16, 3});
        FAIL("expected ImageIoError");
    } catch (const ImageIoError& e) {
        CHECK(std::string(e.what()).find("wrong_size.ppm") != std::string::npos);
    }
    CHECK_THROWS_AS(load_pool("no_such_directory_xyz", {16, 16, 3}), ImageIoError);
}

TEST_CASE("synthesize_pool_image is deterministic and in range") {
    Tensor a = synthesize_pool_image(9, 0, 16);
    Tensor b = synthesize_pool_image(9, 0, 16);
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
    Tensor c = synthesize_pool_image(9, 1, 16);
    CHECK(std::memcmp(a.data(), c.data(), a.size() * sizeof(double)) != 0);
    for (double v : a.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("select_topk exhaustive and duplicate cases") {
    SurrogateModel model = init_model(mini_config());
    ReferencePool pool = synthetic_pool(6, 9, 16);
    auto tokens = tokenize_bytes("a bright red circle", model.config);

    auto all = select_topk(pool, model, tokens, pool.entries.size());
    REQUIRE(all.size() == 6);
    for (std::size_t i = 1; i < all.size(); ++i)
        CHECK(all[i - 1].similarity >= all[i].similarity);

    // duplicate of the best image dominates
    ReferencePool dup = pool;
    dup.entries.push_back(PoolEntry{"zz_copy_of_best.ppm", pool.entries[all[0].pool_index].image});
    auto top2 = select_topk(dup, model, tokens, 2);
    REQUIRE(top2.size() == 2);
    const bool both_best = (top2[0].id == all[0].id && top2[1].id == "zz_copy_of_best.ppm");
    CHECK(both_best);
    CHECK(top2[0].similarity == top2[1].similarity);

    CHECK_THROWS_AS(select_topk(pool, model, tokens, 0), ParameterError);
    CHECK_THROWS_AS(select_topk(pool, model, tokens, 7), ParameterError);
}

TEST_CASE("select_topk agrees with a brute-force sort on random pools") {
    SurrogateModel model = init_model(mini_config());
    SplitMix64 rng(555);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 3 + rng.next_below(5);
        ReferencePool pool = synthetic_pool(n, 100 + trial, 16);
        std::string text = "target number " + std::to_string(trial);
        auto tokens = tokenize_bytes(text, model.config);
        const std::size_t k = 1 + rng.next_below(n);

        auto got = select_topk(pool, model, tokens, k);

        const Tensor text_emb = encode_text(model, tokens).embedding;
        const std::vector<double> txt(text_emb.values().begin(), text_emb.values().end());
        std::vector<std::pair<std::string, double>> scored;
        for (const auto& e : pool.entries) {
            const Tensor embedding = encode_image(model, e.image).embedding;
            std::vector<double> emb(embedding.values().begin(), embedding.values().end());
            scored.emplace_back(e.id, oracle::cosine(emb, txt));
        }
        auto expect = oracle::topk_by_sort(scored, k);
        REQUIRE(got.size() == expect.size());
        for (std::size_t i = 0; i < k; ++i) CHECK(got[i].id == expect[i]);
    }
}

TEST_CASE("compute_weights trivial and oracle cases") {
    std::vector<double> one = {0.42};
    auto w1 = compute_weights(one, 5.0);
    CHECK(w1.size() == 1);
    CHECK(w1[0] == 1.0);

    std::vector<double> equal = {0.3, 0.3, 0.3, 0.3};
    auto we = compute_weights(equal, 2.0);
    for (double w : we) CHECK(w == doctest::Approx(0.25).epsilon(1e-12));

    std::vector<double> sims = {0.9, 0.7, 0.5};
    auto got = compute_weights(sims, 5.0);
    auto expect = oracle::softmax_direct(sims, 5.0);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-12));

    CHECK_THROWS_AS(compute_weights(sims, 0.0), ParameterError);
}

TEST_CASE("build_anchor_set K=1 reproduces the anchor exactly") {
    SurrogateModel model = init_model(mini_config());
    ReferencePool pool = synthetic_pool(4, 11, 16);
    auto tokens = tokenize_bytes("one anchor", model.config);
    const std::vector<int> layers = {1, 3};

    AnchorSet set = build_anchor_set(pool, model, tokens, 1, 5.0, layers);
    REQUIRE(set.ids.size() == 1);
    CHECK(set.weights[0] == 1.0);

    ImageEncoding own = encode_image(model, set.images[0], layers);
    for (std::size_t i = 0; i < own.embedding.size(); ++i)
        CHECK(set.embedding_targets[0][i] == own.embedding[i]);
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const LayerTarget& target = set.layer_targets.at(layers[li]);
        for (std::size_t i = 0; i < model.config.width; ++i) {
            CHECK(target.cls_target[i] == own.taps[li].cls[i]);
            CHECK(target.pooled_target[i] == own.taps[li].pooled[i]);
        }
    }
}

TEST_CASE("two identical anchors yield the shared features") {
    SurrogateModel model = init_model(mini_config());
    Tensor shared = synthesize_pool_image(21, 0, 16);
    ReferencePool pool;
    pool.entries.push_back(PoolEntry{"a.ppm", shared});
    pool.entries.push_back(PoolEntry{"b.ppm", shared});
    auto tokens = tokenize_bytes("twin anchors", model.config);
    const std::vector<int> layers = {2};

    AnchorSet set = build_anchor_set(pool, model, tokens, 2, 5.0, layers);
    CHECK(set.weights[0] == doctest::Approx(0.5).epsilon(1e-12));
    ImageEncoding own = encode_image(model, shared, layers);
    const LayerTarget& target = set.layer_targets.at(2);
    for (std::size_t i = 0; i < model.config.width; ++i) {
        CHECK(target.cls_target[i] == doctest::Approx(own.taps[0].cls[i]).epsilon(1e-14));
        CHECK(target.pooled_target[i] == doctest::Approx(own.taps[0].pooled[i]).epsilon(1e-14));
    }
}

TEST_CASE("K=3 layer targets match the naive weighted-sum oracle") {
    SurrogateModel model = init_model(mini_config());
    ReferencePool pool = synthetic_pool(5, 33, 16);
    auto tokens = tokenize_bytes("triple anchor target", model.config);
    const std::vector<int> layers = {1, 2, 3};

    AnchorSet set = build_anchor_set(pool, model, tokens, 3, 5.0, layers);
    for (std::size_t li = 0; li < layers.size(); ++li) {
        for (std::size_t i = 0; i < model.config.width; ++i) {
            double cls = 0.0, pooled = 0.0;
            for (std::size_t a = 0; a < 3; ++a) {
                ImageEncoding enc = encode_image(model, set.images[a], layers);
                cls += set.weights[a] * enc.taps[li].cls[i];
                pooled += set.weights[a] * enc.taps[li].pooled[i];
            }
            const LayerTarget& target = set.layer_targets.at(layers[li]);
            CHECK(target.cls_target[i] == doctest::Approx(cls).epsilon(1e-12));
            CHECK(target.pooled_target[i] == doctest::Approx(pooled).epsilon(1e-12));
        }
    }
}

TEST_CASE("layer targets are linear in the weights") {
    SurrogateModel model = init_model(mini_config());
    ReferencePool pool = synthetic_pool(3, 44, 16);
    std::vector<Tensor> images;
    for (const auto& e : pool.entries) images.push_back(e.image);
    const std::vector<int> layers = {2, 3};

    const std::vector<double> w1 = {0.6, 0.3, 0.1};
    const std::vector<double> w2 = {0.2, 0.2, 0.6};
    const double alpha = 0.35;
    std::vector<double> mixed(3);
    for (std::size_t i = 0; i < 3; ++i) mixed[i] = alpha * w1[i] + (1 - alpha) * w2[i];

    auto t1 = weighted_layer_targets(model, images, w1, layers);
    auto t2 = weighted_layer_targets(model, images, w2, layers);
    auto tm = weighted_layer_targets(model, images, mixed, layers);
    for (int l : layers) {
        for (std::size_t i = 0; i < model.config.width; ++i) {
            const double expect_cls =
                alpha * t1.at(l).cls_target[i] + (1 - alpha) * t2.at(l).cls_target[i];
            const double expect_pooled =
                alpha * t1.at(l).pooled_target[i] + (1 - alpha) * t2.at(l).pooled_target[i];
            CHECK(tm.at(l).cls_target[i] == doctest::Approx(expect_cls).epsilon(1e-10));
            CHECK(tm.at(l).pooled_target[i] == doctest::Approx(expect_pooled).epsilon(1e-10));
        }
    }
}

TEST_CASE("anchor set construction is deterministic") {
    SurrogateModel model = init_model(mini_config());
    ReferencePool pool = synthetic_pool(6, 55, 16);
    auto tokens = tokenize_bytes("deterministic anchors", model.config);
    const std::vector<int> layers = {1, 3};
    AnchorSet a = build_anchor_set(pool, model, tokens, 3, 5.0, layers);
    AnchorSet b = build_anchor_set(pool, model, tokens, 3, 5.0, layers);
    CHECK(anchor_set_checksum(a) == anchor_set_checksum(b));
}

TEST_CASE("anchor manifest echoes parameters and normalized weights") {
    SurrogateModel model = init_model(mini_config());
    ReferencePool pool = synthetic_pool(5, 66, 16);
    auto tokens = tokenize_bytes("manifest check", model.config);
    AnchorSet set = build_anchor_set(pool, model, tokens, 4, 5.0, std::vector<int>{2});
    std::string manifest = anchor_manifest(set, 4, 5.0);
    CHECK(manifest.find("# K = 4") != std::string::npos);
    CHECK(manifest.find("# tau = 5") != std::string::npos);
    CHECK(manifest.find("id,similarity,weight") != std::string::npos);

    double sum = 0.0;
    for (double w : set.weights) {
        CHECK(w > 0.0);
        CHECK(w <= 1.0);
        sum += w;
    }
    CHECK(std::fabs(sum - 1.0) < 1e-9);
}
