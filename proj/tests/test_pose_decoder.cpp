#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fd_util.hpp"
#include "model_util.hpp"
#include "t2p/pose_decoder.hpp"
#include "t2p/training.hpp"

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
    Model model{cfg, skel, 31};

    Array decode_with_latents(const GlobalPoseSequence& scene, const Array& latents) {
        ScenePrep prep = prepare_scene(scene, skel, cfg);
        Tape t;
        NnContext ctx{t, model.params()};
        Var tokens = build_mpbp_tokens(ctx, prep.local_rot, skel, cfg);
        PoseEmbedding pose = encode_pose(ctx, tokens, cfg);
        return decode_poses(ctx, pose, t.input(latents), prep, skel, cfg)->v();
    }
};

}  // namespace

TEST_CASE("decode: hip offsets are exactly zero, shape contract holds") {
    Fixture fx;
    GlobalPoseSequence scene = walking_scene(3, 8, 1);
    ForecastBundle bundle = fx.model.predict(scene);
    REQUIRE(bundle.local.shape ==
            std::vector<int>{fx.cfg.scenario.modes, 3, fx.cfg.scenario.future_steps, 15, 3});
    for (int f = 0; f < fx.cfg.scenario.modes; ++f)
        for (int a = 0; a < 3; ++a)
            for (int s = 0; s < fx.cfg.scenario.future_steps; ++s)
                for (int c = 0; c < 3; ++c)
                    CHECK(bundle.local.at({f, a, s, fx.skel.hip_index, c}) == 0.0);
}

TEST_CASE("decode: trajectory conditioning is live") {
    Fixture fx;
    GlobalPoseSequence scene = walking_scene(2, 8, 2);
    Rng rng(3);
    Array lat = random_array({fx.cfg.scenario.modes, 2, 96}, rng);
    Array out1 = fx.decode_with_latents(scene, lat);
    Array lat2 = lat;
    for (double& v : lat2.data) v += 0.05;
    Array out2 = fx.decode_with_latents(scene, lat2);
    CHECK(max_abs_diff(out1, out2) > 1e-8);  // perturbing Q_Tr changes the output

    // two modes with identical pose memory but different latents diverge
    Array modes_differ({2, 2, 96});
    for (int a = 0; a < 2; ++a)
        for (int c = 0; c < 96; ++c) {
            modes_differ.at({0, a, c}) = lat.at({0, a, c});
            modes_differ.at({1, a, c}) = lat.at({0, a, c}) + 0.3;
        }
    Array out3 = fx.decode_with_latents(scene, modes_differ);
    double diff = 0;
    for (int a = 0; a < 2; ++a)
        for (int s = 0; s < fx.cfg.scenario.future_steps; ++s)
            for (int q = 0; q < 15; ++q)
                for (int c = 0; c < 3; ++c)
                    diff = std::max(diff, std::abs(out3.at({0, a, s, q, c}) - out3.at({1, a, s, q, c})));
    CHECK(diff > 1e-8);
}

TEST_CASE("decode: zero residual head holds the last pose") {
    Fixture fx;
    for (const char* name : {"pose_dec.fc3.w", "pose_dec.fc3.b"}) {
        Array& v = fx.model.params().value(name);
        std::fill(v.data.begin(), v.data.end(), 0.0);
    }
    GlobalPoseSequence scene = walking_scene(2, 8, 4);
    ForecastBundle bundle = fx.model.predict(scene);
    auto [traj, local] = decompose(scene, fx.skel);
    const int tp = fx.cfg.scenario.past_steps;
    // last T_f frames of the replicate-padded past are the last observed pose
    for (int f = 0; f < fx.cfg.scenario.modes; ++f)
        for (int a = 0; a < 2; ++a)
            for (int s = 0; s < fx.cfg.scenario.future_steps; ++s)
                for (int q = 0; q < 15; ++q)
                    for (int c = 0; c < 3; ++c)
                        CHECK(bundle.local.at({f, a, s, q, c}) ==
                              doctest::Approx(local.offsets.at({a, tp - 1, q, c})).epsilon(1e-9));
}

TEST_CASE("compose: zero local rides the trajectory, hip equals trajectory") {
    Rng rng(5);
    Array traj = random_array({2, 3, 4, 3}, rng);
    Array local({2, 3, 4, 15, 3});
    Array composed = compose_forecast(traj, local);
    for (int f = 0; f < 2; ++f)
        for (int a = 0; a < 3; ++a)
            for (int s = 0; s < 4; ++s)
                for (int q = 0; q < 15; ++q)
                    for (int c = 0; c < 3; ++c)
                        CHECK(composed.at({f, a, s, q, c}) == traj.at({f, a, s, c}));
}

TEST_CASE("compose: matches a loop oracle bit-exactly and rejects bad shapes") {
    Rng rng(6);
    Array traj = random_array({2, 2, 3, 3}, rng);
    Array local = random_array({2, 2, 3, 5, 3}, rng);
    Array composed = compose_forecast(traj, local);
    for (int f = 0; f < 2; ++f)
        for (int a = 0; a < 2; ++a)
            for (int s = 0; s < 3; ++s)
                for (int q = 0; q < 5; ++q)
                    for (int c = 0; c < 3; ++c)
                        CHECK(composed.at({f, a, s, q, c}) ==
                              traj.at({f, a, s, c}) + local.at({f, a, s, q, c}));

    Array bad = random_array({2, 2, 4, 3}, rng);
    CHECK_THROWS_AS(compose_forecast(bad, local), ShapeError);
}

TEST_CASE("composed forecasts: full-pipeline SE(2) equivariance") {
    Fixture fx;
    GlobalPoseSequence scene = walking_scene(3, 8, 7);
    const double yaw = -2.1, ux = 0.4, uy = 7.7;
    ForecastBundle a = fx.model.predict(scene);
    ForecastBundle b = fx.model.predict(apply_se2(scene, yaw, ux, uy));
    Array expected = se2_points(a.composed, yaw, ux, uy);
    CHECK(max_abs_diff(expected, b.composed) < 1e-9);
}

TEST_CASE("decode: coefficient truncation knob keeps contracts intact") {
    ModelConfig cfg = small_config();
    cfg.dct_coeffs = 6;  // keep 6 of the 14 coefficients
    Skeleton skel = Skeleton::default15();
    Model model(cfg, skel, 17);
    GlobalPoseSequence scene = walking_scene(2, 8, 12);
    ForecastBundle bundle = model.predict(scene);
    CHECK(bundle.composed.all_finite());
    REQUIRE(bundle.local.shape ==
            std::vector<int>{cfg.scenario.modes, 2, cfg.scenario.future_steps, 15, 3});
    for (int f = 0; f < cfg.scenario.modes; ++f)
        for (int a = 0; a < 2; ++a)
            for (int s = 0; s < cfg.scenario.future_steps; ++s)
                for (int c = 0; c < 3; ++c) CHECK(bundle.local.at({f, a, s, 0, c}) == 0.0);
}

TEST_CASE("pose decoder: gradients match finite differences") {
    Fixture fx;
    GlobalPoseSequence scene = walking_scene(2, 14, 8);
    auto run = [&](bool want_grad) {
        Tape t;
        auto fwd = fx.model.forward(t, scene, false, nullptr);
        SceneLoss sl = compute_loss(t, fwd, scene, fx.skel, fx.cfg);
        if (want_grad) {
            t.backward(sl.loss);
            fx.model.params().zero_grads();
            t.accumulate_param_grads(fx.model.params());
        }
        return sl.loss->v()[0];
    };
    std::vector<std::string> names = {"pose_dec.query.w", "pose_dec.blk0.attn.k.w",
                                      "pose_dec.blk1.attn.q.w", "pose_dec.blk1.ffn1.w",
                                      "pose_dec.fc1.w", "pose_dec.fc3.b"};
    auto rep = fd_check(fx.model.params(), names, run, 4, 888);
    INFO("worst " << rep.worst_param << " rel " << rep.max_rel_err);
    CHECK(rep.max_rel_err < 1e-4);
}
