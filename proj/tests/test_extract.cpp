#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fd_util.hpp"
#include "t2p/extract.hpp"
#include "t2p/synth.hpp"

using namespace t2p;
using t2p::testing::random_array;

namespace {

Array pinhole_k(double f, double cx, double cy) {
    Array k({3, 3});
    k[0] = f;
    k[2] = cx;
    k[4] = f;
    k[5] = cy;
    k[8] = 1.0;
    return k;
}

double dist_to_ray(const Vec3& p, const Array& k_inv, double ann_x, double ann_y) {
    // distance from p to the line through (0,0,p.z) and z*inv(K)(X,Y,1)
    bool degenerate = false;
    const Vec3 proj = refine_joint(p, ann_x, ann_y, k_inv, &degenerate);
    return std::sqrt((p[0] - proj[0]) * (p[0] - proj[0]) + (p[1] - proj[1]) * (p[1] - proj[1]) +
                     (p[2] - proj[2]) * (p[2] - proj[2]));
}

}  // namespace

TEST_CASE("refine_joint: idempotent, closed-form projection, degenerate passthrough") {
    Array k = pinhole_k(500, 320, 240);
    Array k_inv = invert_3x3(k);

    // a joint already on its annotation ray is unchanged
    const double z = 5.0;
    const Vec3 on_ray = {0.5, -0.25, z};
    Array proj = project_points(Array({1, 3}, {on_ray[0], on_ray[1], on_ray[2]}), k);
    Vec3 refined = refine_joint(on_ray, proj.at({0, 0}), proj.at({0, 1}), k_inv);
    for (int c = 0; c < 3; ++c) CHECK(std::abs(refined[static_cast<size_t>(c)] - on_ray[static_cast<size_t>(c)]) < 1e-12);

    // closed-form check: identity-scaled pinhole, hand case
    Array ki = pinhole_k(1, 0, 0);
    Array ki_inv = invert_3x3(ki);
    // annotation (X, Y) = (0.5, 0): line from A=(0,0,5) to B=5*(0.5,0,1)=(2.5,0,5),
    // direction +x at depth 5; the y component is squashed, x and z survive
    const Vec3 p = {1.0, 0.4, 5.0};
    Vec3 r = refine_joint(p, 0.5, 0.0, ki_inv);
    CHECK(r[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r[2] == doctest::Approx(5.0).epsilon(1e-12));

    // idempotence on a random cloud
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const Vec3 q = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(2, 8)};
        const double ax = rng.uniform(0, 640), ay = rng.uniform(0, 480);
        Vec3 once = refine_joint(q, ax, ay, k_inv);
        Vec3 twice = refine_joint(once, ax, ay, k_inv);
        for (int c = 0; c < 3; ++c)
            CHECK(std::abs(once[static_cast<size_t>(c)] - twice[static_cast<size_t>(c)]) < 1e-12);
        // projection never increases the distance to the ray
        CHECK(dist_to_ray(once, k_inv, ax, ay) <= dist_to_ray(q, k_inv, ax, ay) + 1e-12);
    }

    // degenerate: annotation at the principal point makes A == B
    bool degenerate = false;
    Vec3 same = refine_joint({1, 1, 4}, 320, 240, k_inv, &degenerate);
    CHECK(degenerate);
    CHECK(same[0] == 1.0);
}

TEST_CASE("refine_pose: annotation equal to the detection's projection is a fixpoint") {
    Array k = pinhole_k(400, 320, 240);
    Rng rng(2);
    Array joints({15, 3});
    for (int q = 0; q < 15; ++q) {
        joints.at({q, 0}) = rng.uniform(-1, 1);
        joints.at({q, 1}) = rng.uniform(-1, 1);
        joints.at({q, 2}) = rng.uniform(3, 6);
    }
    Array det2d = project_points(joints, k);
    Array refined = refine_pose(joints, det2d, det2d, k);
    for (std::int64_t i = 0; i < joints.size(); ++i)
        CHECK(refined[i] == doctest::Approx(joints[i]).epsilon(1e-12));
}

TEST_CASE("match_filter: exact projection matches, boundary rejects, greedy assigns") {
    Array a({2, 2}, {100, 100, 200, 200});
    Array b = a;
    // exact match
    CHECK(match_filter({&a}, {&b}, 1.0)[0] == 0);

    // distance exactly tau is rejected (strict inequality)
    Array off({2, 2}, {103, 104, 203, 204});  // every joint 5 px away
    CHECK(match_filter({&off}, {&b}, 5.0)[0] == -1);
    CHECK(match_filter({&off}, {&b}, 5.0 + 1e-9)[0] == 0);

    // two detections, one annotation: closer one wins, other rejected
    Array d1({1, 2}, {102, 100});  // 2 px
    Array d2({1, 2}, {105, 100});  // 5 px
    Array ann({1, 2}, {100, 100});
    auto match = match_filter({&d2, &d1}, {&ann}, 10.0);
    CHECK(match[0] == -1);
    CHECK(match[1] == 0);
}

TEST_CASE("match_filter: tau monotonicity of accepted sets") {
    Rng rng(3);
    std::vector<Array> dets, anns;
    for (int i = 0; i < 6; ++i) dets.push_back(random_array({4, 2}, rng, 0, 300));
    for (int i = 0; i < 5; ++i) anns.push_back(random_array({4, 2}, rng, 0, 300));
    std::vector<const Array*> dp, ap;
    for (auto& d : dets) dp.push_back(&d);
    for (auto& a : anns) ap.push_back(&a);

    std::vector<double> taus = {1, 10, 50, 150, 400, 1000};
    std::vector<std::vector<int>> accepted;
    for (double tau : taus) {
        auto match = match_filter(dp, ap, tau);
        std::vector<int> acc;
        for (size_t i = 0; i < match.size(); ++i)
            if (match[i] >= 0) acc.push_back(static_cast<int>(i));
        accepted.push_back(acc);
    }
    for (size_t i = 1; i < taus.size(); ++i)
        for (int d : accepted[i - 1])
            CHECK(std::find(accepted[i].begin(), accepted[i].end(), d) != accepted[i].end());
}

TEST_CASE("center_pose: rigid shift, identity, local pose untouched") {
    Rng rng(4);
    Array pose = random_array({15, 3}, rng);
    // grid-aligned coordinates make the rigid shift exact in floating point,
    // which the bit-equality of hip-relative offsets relies on
    for (double& v : pose.data) v = std::round(v * 1024.0) / 1024.0;
    Array same = center_pose(pose, 0, pose.at({0, 0}), pose.at({0, 1}));
    for (std::int64_t i = 0; i < pose.size(); ++i) CHECK(same[i] == pose[i]);

    pose.at({0, 0}) = 1.0;
    pose.at({0, 1}) = 1.0;
    Array moved = center_pose(pose, 0, 3.0, 4.0);
    CHECK(moved.at({0, 0}) == 3.0);
    CHECK(moved.at({0, 1}) == 4.0);
    for (int q = 0; q < 15; ++q) {
        CHECK(moved.at({q, 0}) == doctest::Approx(pose.at({q, 0}) + 2.0).epsilon(1e-15));
        CHECK(moved.at({q, 1}) == doctest::Approx(pose.at({q, 1}) + 3.0).epsilon(1e-15));
        CHECK(moved.at({q, 2}) == pose.at({q, 2}));
        // hip-relative offsets are bit-identical
        CHECK(moved.at({q, 0}) - moved.at({0, 0}) == pose.at({q, 0}) - pose.at({0, 0}));
        CHECK(moved.at({q, 1}) - moved.at({0, 1}) == pose.at({q, 1}) - pose.at({0, 1}));
    }
}

TEST_CASE("rotate_about_z: identity, periodicity, quarter turn") {
    Rng rng(5);
    Array pose = random_array({15, 3}, rng);
    Array same = rotate_about_z(pose, 0.0);
    for (std::int64_t i = 0; i < pose.size(); ++i) CHECK(same[i] == pose[i]);

    const double pi = 3.14159265358979323846;
    Array full = rotate_about_z(pose, 2 * pi);
    for (std::int64_t i = 0; i < pose.size(); ++i) CHECK(std::abs(full[i] - pose[i]) < 1e-12);

    Array pt({1, 3}, {1, 0, 1.7});
    Array quarter = rotate_about_z(pt, pi / 2);
    CHECK(std::abs(quarter[0] - 0.0) < 1e-12);
    CHECK(std::abs(quarter[1] - 1.0) < 1e-12);
    CHECK(quarter[2] == 1.7);
}

namespace {

// Synthetic acquisition: world scenes projected into per-camera detections
// with controllable noise, plus exact annotations and boxes.
struct SynthAcq {
    ExtractionScene ex;
    std::vector<GlobalPoseSequence> truth;
};

SynthAcq build_fixture(int frames, int agents, double noise_mm, std::uint64_t seed,
                       double agent_spacing = 1.6) {
    SynthAcq out;
    Skeleton skel = Skeleton::default15();
    CameraModel cam;
    cam.camera_index = 0;
    cam.intrinsics = pinhole_k(600, 320, 240);
    cam.yaw = 0.6;
    out.ex.cameras.push_back(cam);

    SynthSpec spec;
    spec.agent_count = agents;
    spec.duration_frames = frames;
    spec.seed = seed;
    spec.style = MotionStyle::StationaryGesture;
    GlobalPoseSequence world = generate(spec);
    // keep everyone well inside the camera's view and the 4.5 m range
    for (int a = 0; a < agents; ++a)
        for (int f = 0; f < frames; ++f)
            for (int q = 0; q < 15; ++q) {
                world.positions.at({a, f, q, 0}) = world.positions.at({a, f, q, 0}) * 0.3 + 2.5;
                world.positions.at({a, f, q, 1}) =
                    world.positions.at({a, f, q, 1}) * 0.3 + (a - (agents - 1) * 0.5) * agent_spacing * 0.4;
            }
    out.truth.push_back(world);

    Rng noise(seed + 17);
    const double sigma = noise_mm / 1000.0 / 1.5957691;  // E||N(0,s^2 I3)|| = 1.5958 s
    for (int f = 0; f < frames; ++f) {
        for (int a = 0; a < agents; ++a) {
            // world -> camera upright frame (undo yaw), then optical axes
            Array upright({15, 3});
            for (int q = 0; q < 15; ++q) {
                const double x = world.positions.at({a, f, q, 0});
                const double y = world.positions.at({a, f, q, 1});
                const double c = std::cos(-cam.yaw), s = std::sin(-cam.yaw);
                upright.at({q, 0}) = c * x - s * y;
                upright.at({q, 1}) = s * x + c * y;
                upright.at({q, 2}) = world.positions.at({a, f, q, 2});
            }
            Array optical({15, 3});
            for (int q = 0; q < 15; ++q) {
                optical.at({q, 0}) = -upright.at({q, 1});
                optical.at({q, 1}) = -upright.at({q, 2});
                optical.at({q, 2}) = upright.at({q, 0});
            }
            Array truth2d = project_points(optical, cam.intrinsics);

            // monocular-style noise: dominant per-person offset + joint jitter
            Array noisy = optical;
            const double ox = noise.normal() * sigma * 1.25;
            const double oy = noise.normal() * sigma * 0.5;
            const double oz = noise.normal() * sigma * 1.25;  // depth-heavy
            for (int q = 0; q < 15; ++q) {
                noisy.at({q, 0}) += ox + noise.normal() * sigma * 0.45;
                noisy.at({q, 1}) += oy + noise.normal() * sigma * 0.45;
                noisy.at({q, 2}) += oz + noise.normal() * sigma * 0.45;
            }

            DetectionRecord det;
            det.t = f;
            det.cam = 0;
            det.joints_3d = noisy;
            det.joints_2d = project_points(noisy, cam.intrinsics);
            out.ex.detections.push_back(std::move(det));

            AnnotationRecord ann;
            ann.t = f;
            ann.cam = 0;
            ann.agent_id = world.agent_ids[static_cast<size_t>(a)];
            ann.joints_2d = truth2d;
            out.ex.annotations.push_back(std::move(ann));

            BoxRecord box;
            box.t = f;
            box.agent_id = world.agent_ids[static_cast<size_t>(a)];
            box.cx = world.positions.at({a, f, skel.hip_index, 0});
            box.cy = world.positions.at({a, f, skel.hip_index, 1});
            out.ex.boxes.push_back(std::move(box));
        }
    }
    return out;
}

}  // namespace

TEST_CASE("window arithmetic: 100 frames, window 75, stride 15 gives 2 windows") {
    SynthAcq acq = build_fixture(100, 4, 0.0, 6);
    ExtractionConfig cfg;
    cfg.window_frames = 75;
    cfg.stride_frames = 15;
    cfg.min_agents = 3;
    cfg.tau_px = 20.0;
    ExtractionReport rep;
    auto windows = run_extraction(acq.ex, cfg, Skeleton::default15(), &rep);
    CHECK(rep.windows_emitted == 2);
    CHECK(windows.size() == 2);
    CHECK(rep.accepted == rep.detections_total - rep.rejected_match);
}

TEST_CASE("register: a single agent yields no windows at min_agents 3") {
    SynthAcq acq = build_fixture(40, 1, 0.0, 7);
    ExtractionConfig cfg;
    cfg.window_frames = 30;
    cfg.stride_frames = 5;
    auto windows = run_extraction(acq.ex, cfg, Skeleton::default15());
    CHECK(windows.empty());
}

TEST_CASE("register: crossing the range boundary excludes the agent from those windows") {
    SynthAcq acq = build_fixture(40, 4, 0.0, 8);
    // push agent 3 beyond max_range for frames 20..24 by moving its box;
    // center() puts the hip on the box, so range follows the box
    for (auto& box : acq.ex.boxes)
        if (box.agent_id == "agent_3" && box.t >= 20 && box.t < 25) box.cx += 50.0;
    ExtractionConfig cfg;
    cfg.window_frames = 10;
    cfg.stride_frames = 10;  // windows at 0,10,20,30
    cfg.min_agents = 4;
    ExtractionReport rep;
    auto windows = run_extraction(acq.ex, cfg, Skeleton::default15(), &rep);
    // window starting at 20 loses agent_3 and falls below min_agents
    CHECK(rep.windows_considered == 4);
    CHECK(rep.windows_emitted == 3);
    for (const auto& w : windows) CHECK(w.agents() == 4);
}

TEST_CASE("round trip: noiseless acquisition reproduces world poses") {
    SynthAcq acq = build_fixture(30, 3, 0.0, 9);
    ExtractionConfig cfg;
    cfg.window_frames = 30;
    cfg.stride_frames = 30;
    ExtractionReport rep;
    auto windows = run_extraction(acq.ex, cfg, Skeleton::default15(), &rep);
    REQUIRE(windows.size() == 1);
    const GlobalPoseSequence& got = windows[0];
    const GlobalPoseSequence& want = acq.truth[0];
    // agents may be reordered by id; ids are agent_i so order matches
    double max_err = 0;
    for (std::int64_t i = 0; i < want.positions.size(); ++i)
        max_err = std::max(max_err, std::abs(got.positions[i] - want.positions[i]));
    CHECK(max_err < 1e-9);
}

TEST_CASE("round trip: 30 mm detection noise comes out below 30 mm") {
    SynthAcq acq = build_fixture(25, 3, 30.0, 10);
    ExtractionConfig cfg;
    cfg.window_frames = 25;
    cfg.stride_frames = 25;
    cfg.tau_px = 60.0;
    auto windows = run_extraction(acq.ex, cfg, Skeleton::default15());
    REQUIRE(windows.size() == 1);
    const GlobalPoseSequence& got = windows[0];
    const GlobalPoseSequence& want = acq.truth[0];
    double mean_err = 0;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i + 3 <= want.positions.size(); i += 3) {
        double sq = 0;
        for (int c = 0; c < 3; ++c) {
            const double d = got.positions[i + c] - want.positions[i + c];
            sq += d * d;
        }
        mean_err += std::sqrt(sq);
        ++count;
    }
    mean_err /= static_cast<double>(count);
    CHECK(mean_err * 1000.0 < 30.0);
    CHECK(mean_err * 1000.0 > 1.0);  // noise was actually injected
}

TEST_CASE("extraction inputs: jsonl round trip") {
    namespace fs = std::filesystem;
    SynthAcq acq = build_fixture(5, 2, 10.0, 11);
    const std::string dir = "extract_io_test";
    save_extraction_inputs(dir, acq.ex);
    ExtractionScene back = load_extraction_inputs(dir);
    CHECK(back.detections.size() == acq.ex.detections.size());
    CHECK(back.annotations.size() == acq.ex.annotations.size());
    CHECK(back.boxes.size() == acq.ex.boxes.size());
    CHECK(back.cameras.size() == 1);
    CHECK(back.cameras[0].yaw == acq.ex.cameras[0].yaw);
    for (std::int64_t i = 0; i < 9; ++i)
        CHECK(back.cameras[0].intrinsics[i] == acq.ex.cameras[0].intrinsics[i]);
    fs::remove_all(dir);
}

TEST_CASE("camera model: invalid intrinsics are rejected") {
    CameraModel cam;
    cam.intrinsics = Array({3, 3});  // singular
    CHECK_THROWS(cam.validate());
    cam.intrinsics = pinhole_k(-5, 0, 0);
    CHECK_THROWS(cam.validate());
}
