#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "fd_util.hpp"
#include "model_util.hpp"
#include "t2p/metrics.hpp"

using namespace t2p;
using t2p::testing::random_array;

namespace {

// naive per-definition oracles, loops only
double jpe_oracle(const Array& pred, const Array& gt, int t) {
    const int n = pred.dim(0), j = pred.dim(2);
    double acc = 0;
    for (int a = 0; a < n; ++a)
        for (int q = 0; q < j; ++q) {
            double sq = 0;
            for (int c = 0; c < 3; ++c) {
                const double d = pred.at({a, t, q, c}) - gt.at({a, t, q, c});
                sq += d * d;
            }
            acc += std::sqrt(sq);
        }
    return acc / (n * j) * 1000.0;
}

double fde_oracle(const Array& pred, const Array& gt, int t, int hip) {
    const int n = pred.dim(0);
    double acc = 0;
    for (int a = 0; a < n; ++a) {
        double sq = 0;
        for (int c = 0; c < 3; ++c) {
            const double d = pred.at({a, t, hip, c}) - gt.at({a, t, hip, c});
            sq += d * d;
        }
        acc += std::sqrt(sq);
    }
    return acc / n * 1000.0;
}

double ape_oracle(const Array& pred, const Array& gt, int t, int hip) {
    const int n = pred.dim(0), j = pred.dim(2);
    double acc = 0;
    for (int a = 0; a < n; ++a)
        for (int q = 0; q < j; ++q) {
            double sq = 0;
            for (int c = 0; c < 3; ++c) {
                const double p = pred.at({a, t, q, c}) - pred.at({a, t, hip, c});
                const double g = gt.at({a, t, q, c}) - gt.at({a, t, hip, c});
                sq += (p - g) * (p - g);
            }
            acc += std::sqrt(sq);
        }
    return acc / (n * j) * 1000.0;
}

GlobalPoseSequence gt_of(const Array& positions) {
    GlobalPoseSequence s;
    s.scene_id = "gt";
    s.frame_rate = 10.0;
    s.positions = positions;
    for (int a = 0; a < positions.dim(0); ++a) s.agent_ids.push_back("a" + std::to_string(a));
    return s;
}

ForecastBundle bundle_of(const Array& composed, const Skeleton& skel) {
    ForecastBundle b;
    b.scene_id = "gt";
    b.frame_rate = 10.0;
    b.composed = composed;
    const int modes = composed.dim(0), n = composed.dim(1), t = composed.dim(2), j = composed.dim(3);
    b.trajectories = Array({modes, n, t, 3});
    b.local = Array({modes, n, t, j, 3});
    for (int f = 0; f < modes; ++f)
        for (int a = 0; a < n; ++a)
            for (int s = 0; s < t; ++s)
                for (int q = 0; q < j; ++q)
                    for (int c = 0; c < 3; ++c) {
                        if (q == skel.hip_index)
                            b.trajectories.at({f, a, s, c}) = composed.at({f, a, s, q, c});
                    }
    for (int a = 0; a < n; ++a) b.agent_ids.push_back("a" + std::to_string(a));
    return b;
}

}  // namespace

TEST_CASE("jpe: exact match scores zero, 3-4-5 offset scores 5 mm") {
    Skeleton skel = Skeleton::default15();
    Rng rng(1);
    Array gt = random_array({2, 4, 15, 3}, rng);
    CHECK(jpe_mm(gt, gt, 2) == 0.0);

    Array pred = gt;
    for (int a = 0; a < 2; ++a)
        for (int q = 0; q < 15; ++q) {
            pred.at({a, 1, q, 0}) += 0.003;
            pred.at({a, 1, q, 1}) += 0.004;
        }
    CHECK(jpe_mm(pred, gt, 1) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("jpe/ape/fde: random cases match the loop oracles within 1e-12") {
    Skeleton skel = Skeleton::default15();
    Rng rng(2);
    for (int rep = 0; rep < 200; ++rep) {
        Array gt = random_array({3, 5, 15, 3}, rng);
        Array pred = random_array({3, 5, 15, 3}, rng);
        const int t = static_cast<int>(rng.next_below(5));
        CHECK(std::abs(jpe_mm(pred, gt, t) - jpe_oracle(pred, gt, t)) < 1e-12);
        CHECK(std::abs(ape_mm(pred, gt, t, skel) - ape_oracle(pred, gt, t, skel.hip_index)) < 1e-12);
        CHECK(std::abs(fde_mm(pred, gt, t, skel) - fde_oracle(pred, gt, t, skel.hip_index)) < 1e-12);
    }
}

TEST_CASE("ape: translation alignment and the single-joint hand case") {
    Skeleton skel = Skeleton::default15();
    Rng rng(3);
    Array gt = random_array({2, 3, 15, 3}, rng);
    Array pred = gt;
    for (int a = 0; a < 2; ++a)
        for (int s = 0; s < 3; ++s)
            for (int q = 0; q < 15; ++q) {
                pred.at({a, s, q, 0}) += 1.5;  // constant translation per agent
                pred.at({a, s, q, 2}) -= 0.4;
            }
    CHECK(ape_mm(pred, gt, 1, skel) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(fde_mm(pred, gt, 1, skel) > 0.0);  // trajectories differ

    // one non-hip joint off by 10 mm locally, J=15 -> 10/15 mm
    Array pred2 = gt;
    pred2.at({0, 1, 5, 1}) += 0.010;
    CHECK(ape_mm(pred2, gt, 1, skel) == doctest::Approx(10.0 / (15.0 * 2.0)).epsilon(1e-9));
}

TEST_CASE("fde: uniform 50 mm hip offset regardless of local pose") {
    Skeleton skel = Skeleton::default15();
    Rng rng(4);
    Array gt = random_array({3, 2, 15, 3}, rng);
    Array pred = gt;
    for (int a = 0; a < 3; ++a) {
        pred.at({a, 0, skel.hip_index, 2}) += 0.05;
        // scramble a limb; FDE must not care
        pred.at({a, 0, 7, 0}) += 3.0;
    }
    CHECK(fde_mm(pred, gt, 0, skel) == doctest::Approx(50.0).epsilon(1e-12));
}

TEST_CASE("metrics: out-of-range timestep raises") {
    Rng rng(5);
    Array gt = random_array({1, 3, 15, 3}, rng);
    CHECK_THROWS_AS(jpe_mm(gt, gt, 3), std::out_of_range);
    CHECK_THROWS_AS(jpe_mm(gt, gt, -1), std::out_of_range);
}

TEST_CASE("select_mode: hand-set offsets 10/5/20 mm pick mode 1") {
    Skeleton skel = Skeleton::default15();
    Array gt({2, 3, 15, 3});
    for (std::int64_t i = 0; i < gt.size(); ++i) gt[i] = 0.5;
    Array composed({3, 2, 3, 15, 3});
    const double off[3] = {0.010, 0.005, 0.020};
    for (int f = 0; f < 3; ++f)
        for (std::int64_t i = 0; i < gt.size(); ++i)
            composed[f * gt.size() + i] = 0.5 + off[f] / std::sqrt(3.0);
    ForecastBundle b = bundle_of(composed, skel);
    CHECK(select_mode(b, gt_of(gt)) == 1);

    // single mode and exact mode cases
    Array one({1, 2, 3, 15, 3});
    for (std::int64_t i = 0; i < gt.size(); ++i) one[i] = gt[i];
    CHECK(select_mode(bundle_of(one, skel), gt_of(gt)) == 0);
}

TEST_CASE("select_mode: an exact mode is selected") {
    Skeleton skel = Skeleton::default15();
    Rng rng(6);
    Array gt = random_array({2, 4, 15, 3}, rng);
    Array composed({2, 2, 4, 15, 3});
    for (std::int64_t i = 0; i < gt.size(); ++i) {
        composed[i] = gt[i] + 0.3;  // mode 0 offset
        composed[gt.size() + i] = gt[i];
    }
    CHECK(select_mode(bundle_of(composed, skel), gt_of(gt)) == 1);
}

TEST_CASE("decomposition consistency: exact local poses make JPE equal FDE") {
    Skeleton skel = Skeleton::default15();
    Rng rng(7);
    Array gt = random_array({2, 3, 15, 3}, rng);
    // force hip-local offsets of pred equal to gt's: pred = gt + per-(agent,frame) shift
    Array pred = gt;
    Rng rng2(8);
    for (int a = 0; a < 2; ++a)
        for (int s = 0; s < 3; ++s) {
            const double dx = rng2.uniform(-1, 1), dy = rng2.uniform(-1, 1), dz = rng2.uniform(-1, 1);
            for (int q = 0; q < 15; ++q) {
                pred.at({a, s, q, 0}) += dx;
                pred.at({a, s, q, 1}) += dy;
                pred.at({a, s, q, 2}) += dz;
            }
        }
    for (int t = 0; t < 3; ++t) {
        CHECK(jpe_mm(pred, gt, t) == doctest::Approx(fde_mm(pred, gt, t, skel)).epsilon(1e-12));
        CHECK(ape_mm(pred, gt, t, skel) == doctest::Approx(0.0).epsilon(1e-9));
    }
}

TEST_CASE("eval frame mapping: floor(t*fps - 1) into the future block") {
    CHECK(eval_frame_index(1.0, 10.0, 20) == 9);
    CHECK(eval_frame_index(2.0, 10.0, 20) == 19);
    CHECK(eval_frame_index(0.25, 10.0, 20) == 1);
    CHECK_THROWS_AS(eval_frame_index(3.0, 10.0, 20), std::out_of_range);
    CHECK_THROWS_AS(eval_frame_index(0.05, 10.0, 20), std::out_of_range);
}

TEST_CASE("report json: scene keys and aggregate means") {
    Skeleton skel = Skeleton::default15();
    Rng rng(9);
    Array gt = random_array({2, 20, 15, 3}, rng);
    Array composed({1, 2, 20, 15, 3});
    for (std::int64_t i = 0; i < gt.size(); ++i) composed[i] = gt[i] + 0.001;
    ForecastBundle b = bundle_of(composed, skel);
    MetricReport rep = evaluate_scene(b, gt_of(gt), skel, {1.0, 2.0});
    auto o = nlohmann::json::parse(report_to_json(rep));
    CHECK(o["scene_id"] == "gt");
    CHECK(o["metrics"].contains("1.0s"));
    CHECK(o["metrics"].contains("2.0s"));
    CHECK(o["selected_mode"] == 0);

    auto agg = nlohmann::json::parse(aggregate_to_json({rep, rep}));
    CHECK(agg["scene_count"] == 2);
    CHECK(agg["aggregate"].contains("1.0s"));
    const double jpe_scene = o["metrics"]["1.0s"]["jpe"].get<double>();
    CHECK(agg["aggregate"]["1.0s"]["jpe"].get<double>() == doctest::Approx(jpe_scene).epsilon(1e-12));
}

TEST_CASE("format_timestamp") {
    CHECK(format_timestamp(1.0) == "1.0s");
    CHECK(format_timestamp(2.5) == "2.5s");
    CHECK(format_timestamp(0.25) == "0.25s");
}
