#pragma once

#include <string>
#include <vector>

#include "t2p/model.hpp"
#include "t2p/motion.hpp"

namespace t2p {

// All three metrics are mean Euclidean distances at one future timestep,
// reported in millimeters.

// Mean over agents and all joints (global + local error together).
double jpe_mm(const Array& pred, const Array& gt, int t);
// Both sides re-expressed in hip frames before the JPE formula (local error).
double ape_mm(const Array& pred, const Array& gt, int t, const Skeleton& skel);
// Mean hip distance (trajectory error).
double fde_mm(const Array& pred, const Array& gt, int t, const Skeleton& skel);

// Scene-level rule: one mode, chosen by minimum JPE averaged over every
// agent, joint and future timestep; ties break to the lowest index.
int select_mode(const ForecastBundle& bundle, const GlobalPoseSequence& gt_future);

// Seconds -> frame index into the future block; throws when out of range.
int eval_frame_index(double seconds, double frame_rate, int horizon);

struct MetricPoint {
    double jpe = 0.0;
    double ape = 0.0;
    double fde = 0.0;
};

struct MetricReport {
    std::string scene_id;
    int selected_mode = 0;
    std::vector<double> timestamps;   // seconds
    std::vector<MetricPoint> points;  // parallel to timestamps
};

MetricReport evaluate_scene(const ForecastBundle& bundle, const GlobalPoseSequence& gt_future,
                            const Skeleton& skel, const std::vector<double>& eval_seconds);

std::string format_timestamp(double seconds);  // 1.0 -> "1.0s"
std::string report_to_json(const MetricReport& report);
std::string aggregate_to_json(const std::vector<MetricReport>& reports);

}  // namespace t2p
