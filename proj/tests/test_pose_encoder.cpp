#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fd_util.hpp"
#include "model_util.hpp"
#include "t2p/pose_encoder.hpp"

using namespace t2p;
using t2p::testing::fd_check;
using t2p::testing::max_abs_diff;
using t2p::testing::random_array;
using t2p::testing::small_config;
using t2p::testing::walking_scene;

namespace {

struct Fixture {
    ModelConfig cfg = small_config();
    Skeleton skel = Skeleton::default15();
    Model model{cfg, skel, 99};
};

}  // namespace

TEST_CASE("mpbp tokens: constant pose has DC-only frequency content") {
    ModelConfig cfg = small_config();
    Rng rng(1);
    Array local({1, cfg.scenario.past_steps, 15, 3});
    Array frame0 = random_array({15, 3}, rng);
    for (int f = 0; f < cfg.scenario.past_steps; ++f)
        for (int q = 0; q < 15; ++q)
            for (int c = 0; c < 3; ++c) local.at({0, f, q, c}) = frame0.at({q, c});

    Array coeffs = pose_channel_coeffs(local, cfg);  // (1, J*3*total)
    const int total = cfg.total_steps();
    for (int ch = 0; ch < 45; ++ch)
        for (int k = 1; k < total; ++k) CHECK(std::abs(coeffs[ch * total + k]) < 1e-12);
}

TEST_CASE("mpbp tokens: identical local motion gives identical token rows") {
    Fixture fx;
    Rng rng(2);
    Array local({2, fx.cfg.scenario.past_steps, 15, 3});
    for (int f = 0; f < fx.cfg.scenario.past_steps; ++f)
        for (int q = 0; q < 15; ++q)
            for (int c = 0; c < 3; ++c) {
                const double v = rng.uniform(-0.5, 0.5);
                local.at({0, f, q, c}) = v;
                local.at({1, f, q, c}) = v;
            }
    Tape t;
    NnContext ctx{t, fx.model.params()};
    Var tokens = build_mpbp_tokens(ctx, local, fx.skel, fx.cfg);
    REQUIRE(tokens->v().shape == std::vector<int>{2, 5, 128});
    for (int p = 0; p < 5; ++p)
        for (int c = 0; c < 128; ++c)
            CHECK(tokens->v().at({0, p, c}) == tokens->v().at({1, p, c}));
}

TEST_CASE("mpbp tokens: shape contract on random scenes") {
    Fixture fx;
    for (int agents : {1, 3, 4}) {
        Rng rng(static_cast<std::uint64_t>(agents));
        Array local = random_array({agents, fx.cfg.scenario.past_steps, 15, 3}, rng);
        Tape t;
        NnContext ctx{t, fx.model.params()};
        Var tokens = build_mpbp_tokens(ctx, local, fx.skel, fx.cfg);
        CHECK(tokens->v().shape == std::vector<int>{agents, 5, 128});
    }
}

TEST_CASE("mpbp tokens: partition referencing missing joints is rejected") {
    Fixture fx;
    Skeleton bad = fx.skel;
    bad.parts[2][1] = 99;
    Rng rng(3);
    Array local = random_array({1, fx.cfg.scenario.past_steps, 15, 3}, rng);
    Tape t;
    NnContext ctx{t, fx.model.params()};
    CHECK_THROWS_AS(build_mpbp_tokens(ctx, local, bad, fx.cfg), ShapeError);
}

TEST_CASE("encode: agent permutation permutes embeddings, duplication duplicates") {
    Fixture fx;
    Rng rng(4);
    Array local = random_array({3, fx.cfg.scenario.past_steps, 15, 3}, rng);

    auto embed = [&](const Array& in) {
        Tape t;
        NnContext ctx{t, fx.model.params()};
        Var tokens = build_mpbp_tokens(ctx, in, fx.skel, fx.cfg);
        PoseEmbedding pe = encode_pose(ctx, tokens, fx.cfg);
        return std::pair<Array, Array>(pe.per_part->v(), pe.pooled->v());
    };
    auto [parts, pooled] = embed(local);

    // permute agents 0<->2
    Array permuted = local;
    const std::int64_t block = local.size() / 3;
    for (std::int64_t c = 0; c < block; ++c) {
        permuted[c] = local[2 * block + c];
        permuted[2 * block + c] = local[c];
    }
    auto [parts2, pooled2] = embed(permuted);
    for (int p = 0; p < 5; ++p)
        for (int c = 0; c < 128; ++c) {
            CHECK(parts2.at({0, p, c}) == parts.at({2, p, c}));
            CHECK(parts2.at({2, p, c}) == parts.at({0, p, c}));
            CHECK(parts2.at({1, p, c}) == parts.at({1, p, c}));
        }

    // duplicate agent 1
    Array dup({4, fx.cfg.scenario.past_steps, 15, 3});
    for (int a = 0; a < 3; ++a)
        for (std::int64_t c = 0; c < block; ++c) dup[a * block + c] = local[a * block + c];
    for (std::int64_t c = 0; c < block; ++c) dup[3 * block + c] = local[1 * block + c];
    auto [parts3, pooled3] = embed(dup);
    for (int c = 0; c < 128; ++c) CHECK(pooled3.at({3, c}) == pooled3.at({1, c}));
}

TEST_CASE("encode: intra-agent isolation") {
    Fixture fx;
    Rng rng(5);
    Array local = random_array({3, fx.cfg.scenario.past_steps, 15, 3}, rng);
    auto embed = [&](const Array& in) {
        Tape t;
        NnContext ctx{t, fx.model.params()};
        PoseEmbedding pe = encode_pose(ctx, build_mpbp_tokens(ctx, in, fx.skel, fx.cfg), fx.cfg);
        return pe.pooled->v();
    };
    Array base = embed(local);
    Array perturbed = local;
    const std::int64_t block = local.size() / 3;
    for (std::int64_t c = 0; c < block; ++c) perturbed[2 * block + c] += 0.37;
    Array after = embed(perturbed);
    for (int c = 0; c < 128; ++c) {
        CHECK(after.at({0, c}) == base.at({0, c}));  // bit-unchanged
        CHECK(after.at({1, c}) == base.at({1, c}));
    }
}

TEST_CASE("encode: translation of the global scene leaves embeddings unchanged") {
    Fixture fx;
    GlobalPoseSequence scene = t2p::testing::quantize_scene(walking_scene(2, 10, 7));
    GlobalPoseSequence moved = apply_se2(scene, 0.0, 10.0, -3.0);

    auto embed = [&](const GlobalPoseSequence& s) {
        ScenePrep prep = prepare_scene(s, fx.skel, fx.cfg);
        Tape t;
        NnContext ctx{t, fx.model.params()};
        PoseEmbedding pe = encode_pose(ctx, build_mpbp_tokens(ctx, prep.local_rot, fx.skel, fx.cfg), fx.cfg);
        return pe.pooled->v();
    };
    Array a = embed(scene);
    Array b = embed(moved);
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("encode: pooled row is the mean over part tokens") {
    Fixture fx;
    Rng rng(6);
    Array local = random_array({2, fx.cfg.scenario.past_steps, 15, 3}, rng);
    Tape t;
    NnContext ctx{t, fx.model.params()};
    PoseEmbedding pe = encode_pose(ctx, build_mpbp_tokens(ctx, local, fx.skel, fx.cfg), fx.cfg);
    for (int a = 0; a < 2; ++a)
        for (int c = 0; c < 128; ++c) {
            double mean = 0;
            for (int p = 0; p < 5; ++p) mean += pe.per_part->v().at({a, p, c});
            mean /= 5;
            CHECK(pe.pooled->v().at({a, c}) == doctest::Approx(mean).epsilon(1e-14));
        }
}

TEST_CASE("encode: gradient check through tokens and blocks") {
    Fixture fx;
    Rng rng(7);
    Array local = random_array({2, fx.cfg.scenario.past_steps, 15, 3}, rng, -0.4, 0.4);
    auto run = [&](bool want_grad) {
        Tape t;
        NnContext ctx{t, fx.model.params()};
        PoseEmbedding pe = encode_pose(ctx, build_mpbp_tokens(ctx, local, fx.skel, fx.cfg), fx.cfg);
        Rng wrng(8);
        Array w(pe.pooled->v().shape);
        for (double& v : w.data) v = wrng.uniform(-1, 1);
        Var loss = t.sum_all(t.mul_const(pe.pooled, w));
        if (want_grad) {
            t.backward(loss);
            fx.model.params().zero_grads();
            t.accumulate_param_grads(fx.model.params());
        }
        return loss->v()[0];
    };
    std::vector<std::string> names = {"pose_enc.mpbp0.w", "pose_enc.blk0.attn.q.w",
                                      "pose_enc.blk1.ffn1.w", "pose_enc.blk1.ln2.g",
                                      "pose_enc.blk0.attn.o.b"};
    auto rep = fd_check(fx.model.params(), names, run, 5, 321);
    INFO("worst " << rep.worst_param);
    CHECK(rep.max_rel_err < 1e-4);
}
