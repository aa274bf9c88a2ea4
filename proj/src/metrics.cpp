#include "t2p/metrics.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

namespace t2p {

using nlohmann::json;

namespace {

void check_pair(const Array& pred, const Array& gt, int t) {
    if (pred.rank() != 4 || gt.rank() != 4 || pred.shape != gt.shape)
        throw ShapeError("metrics: prediction " + pred.shape_str() + " and ground truth " +
                         gt.shape_str() + " must both be (agents, frames, joints, 3)");
    if (t < 0 || t >= pred.dim(1))
        throw std::out_of_range("metrics: timestep " + std::to_string(t) +
                                " outside horizon of " + std::to_string(pred.dim(1)) + " frames");
}

}  // namespace

double jpe_mm(const Array& pred, const Array& gt, int t) {
    check_pair(pred, gt, t);
    const int n = pred.dim(0), frames = pred.dim(1), j = pred.dim(2);
    double acc = 0.0;
    for (int a = 0; a < n; ++a) {
        const std::int64_t base = (static_cast<std::int64_t>(a) * frames + t) * j * 3;
        for (int q = 0; q < j; ++q) {
            double sq = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = pred[base + q * 3 + c] - gt[base + q * 3 + c];
                sq += d * d;
            }
            acc += std::sqrt(sq);
        }
    }
    return acc / (static_cast<double>(n) * j) * 1000.0;
}

double ape_mm(const Array& pred, const Array& gt, int t, const Skeleton& skel) {
    check_pair(pred, gt, t);
    const int n = pred.dim(0), frames = pred.dim(1), j = pred.dim(2);
    const int hip = skel.hip_index;
    double acc = 0.0;
    for (int a = 0; a < n; ++a) {
        const std::int64_t base = (static_cast<std::int64_t>(a) * frames + t) * j * 3;
        for (int q = 0; q < j; ++q) {
            double sq = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double p = pred[base + q * 3 + c] - pred[base + hip * 3 + c];
                const double g = gt[base + q * 3 + c] - gt[base + hip * 3 + c];
                const double d = p - g;
                sq += d * d;
            }
            acc += std::sqrt(sq);
        }
    }
    return acc / (static_cast<double>(n) * j) * 1000.0;
}

double fde_mm(const Array& pred, const Array& gt, int t, const Skeleton& skel) {
    check_pair(pred, gt, t);
    const int n = pred.dim(0), frames = pred.dim(1), j = pred.dim(2);
    const int hip = skel.hip_index;
    double acc = 0.0;
    for (int a = 0; a < n; ++a) {
        const std::int64_t base = (static_cast<std::int64_t>(a) * frames + t) * j * 3;
        double sq = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double d = pred[base + hip * 3 + c] - gt[base + hip * 3 + c];
            sq += d * d;
        }
        acc += std::sqrt(sq);
    }
    return acc / static_cast<double>(n) * 1000.0;
}

int select_mode(const ForecastBundle& bundle, const GlobalPoseSequence& gt_future) {
    const int modes = bundle.modes();
    if (modes < 1) throw std::invalid_argument("select_mode: bundle has no modes");
    const int horizon = bundle.horizon();
    int best = 0;
    double best_jpe = 0.0;
    for (int f = 0; f < modes; ++f) {
        // mean over all (agent, joint, timestep) is the timestep-average JPE
        Array mode({bundle.agents(), horizon, bundle.joints(), 3});
        const std::int64_t block = mode.size();
        for (std::int64_t i = 0; i < block; ++i)
            mode[i] = bundle.composed[static_cast<std::int64_t>(f) * block + i];
        double total = 0.0;
        for (int t = 0; t < horizon; ++t) total += jpe_mm(mode, gt_future.positions, t);
        if (f == 0 || total < best_jpe) {
            best = f;
            best_jpe = total;
        }
    }
    return best;
}

int eval_frame_index(double seconds, double frame_rate, int horizon) {
    const int idx = static_cast<int>(std::floor(seconds * frame_rate - 1.0));
    if (idx < 0 || idx >= horizon)
        throw std::out_of_range("evaluation timestamp " + std::to_string(seconds) +
                                "s maps to frame " + std::to_string(idx) +
                                ", outside horizon of " + std::to_string(horizon) + " frames");
    return idx;
}

MetricReport evaluate_scene(const ForecastBundle& bundle, const GlobalPoseSequence& gt_future,
                            const Skeleton& skel, const std::vector<double>& eval_seconds) {
    MetricReport rep;
    rep.scene_id = bundle.scene_id;
    rep.selected_mode = select_mode(bundle, gt_future);

    Array mode({bundle.agents(), bundle.horizon(), bundle.joints(), 3});
    const std::int64_t block = mode.size();
    for (std::int64_t i = 0; i < block; ++i)
        mode[i] = bundle.composed[static_cast<std::int64_t>(rep.selected_mode) * block + i];

    for (double s : eval_seconds) {
        const int t = eval_frame_index(s, bundle.frame_rate, bundle.horizon());
        MetricPoint p;
        p.jpe = jpe_mm(mode, gt_future.positions, t);
        p.ape = ape_mm(mode, gt_future.positions, t, skel);
        p.fde = fde_mm(mode, gt_future.positions, t, skel);
        rep.timestamps.push_back(s);
        rep.points.push_back(p);
    }
    return rep;
}

std::string format_timestamp(double seconds) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", seconds);
    std::string s(buf);
    if (s.find('.') == std::string::npos) s += ".0";
    return s + "s";
}

std::string report_to_json(const MetricReport& report) {
    json o;
    o["scene_id"] = report.scene_id;
    o["selected_mode"] = report.selected_mode;
    json m;
    for (size_t i = 0; i < report.timestamps.size(); ++i)
        m[format_timestamp(report.timestamps[i])] = {{"jpe", report.points[i].jpe},
                                                     {"ape", report.points[i].ape},
                                                     {"fde", report.points[i].fde}};
    o["metrics"] = std::move(m);
    return o.dump();
}

std::string aggregate_to_json(const std::vector<MetricReport>& reports) {
    json o;
    json scenes = json::array();
    for (const auto& r : reports) scenes.push_back(json::parse(report_to_json(r)));
    o["scenes"] = std::move(scenes);

    json agg;
    if (!reports.empty()) {
        const auto& stamps = reports.front().timestamps;
        for (size_t i = 0; i < stamps.size(); ++i) {
            double jpe = 0, ape = 0, fde = 0;
            for (const auto& r : reports) {
                jpe += r.points[i].jpe;
                ape += r.points[i].ape;
                fde += r.points[i].fde;
            }
            const double n = static_cast<double>(reports.size());
            agg[format_timestamp(stamps[i])] = {{"jpe", jpe / n}, {"ape", ape / n}, {"fde", fde / n}};
        }
    }
    o["aggregate"] = std::move(agg);
    o["scene_count"] = reports.size();
    return o.dump(2);
}

}  // namespace t2p
