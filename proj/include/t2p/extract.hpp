#pragma once

#include <map>
#include <string>
#include <vector>

#include "t2p/motion.hpp"
#include "t2p/tape.hpp"

namespace t2p {

struct CameraModel {
    Array intrinsics{std::vector<int>{3, 3}};  // K
    double yaw = 0.0;                          // camera frame -> world, about z
    int camera_index = 0;

    void validate() const;  // fx, fy > 0 and K invertible
};

struct DetectionRecord {
    int t = 0;
    int cam = 0;
    Array joints_3d;  // (J, 3) camera optical frame, z = depth
    Array joints_2d;  // (J, 2) pixel projections
};

struct AnnotationRecord {
    int t = 0;
    int cam = 0;
    std::string agent_id;
    Array joints_2d;  // (J, 2)
};

struct BoxRecord {
    int t = 0;
    std::string agent_id;
    double cx = 0.0, cy = 0.0;  // world-frame ground center
};

struct ExtractionScene {
    std::vector<DetectionRecord> detections;
    std::vector<AnnotationRecord> annotations;
    std::vector<BoxRecord> boxes;
    std::vector<CameraModel> cameras;
};

struct ExtractionConfig {
    double tau_px = 20.0;      // 2D match threshold, strict inequality
    double max_range = 4.5;    // meters from the robot
    int min_agents = 3;
    int stride_frames = 15;
    int window_frames = 30;    // T_p + T_f
    double frame_rate = 15.0;

    void validate() const;
};

struct ExtractionReport {
    std::int64_t detections_total = 0;
    std::int64_t rejected_match = 0;    // failed the closest-annotation gate
    std::int64_t accepted = 0;
    std::int64_t missing_box = 0;
    std::int64_t duplicate_registration = 0;
    std::int64_t registered = 0;
    std::int64_t range_excluded_agent_windows = 0;
    std::int64_t windows_considered = 0;
    std::int64_t windows_emitted = 0;

    std::string to_json() const;
};

// Greedy ascending-distance assignment of detections to annotations; each
// annotation is used at most once and a candidate is accepted only when its
// mean per-joint pixel distance is strictly below tau. Returns one annotation
// index per detection, -1 for rejected.
std::vector<int> match_filter(const std::vector<const Array*>& det_2d,
                              const std::vector<const Array*>& ann_2d, double tau);

// Orthogonal projection of one camera-frame joint onto the line through
// (0,0,z) and z*inv(K)*(X,Y,1). A degenerate line returns the joint unchanged
// and sets *degenerate.
Vec3 refine_joint(const Vec3& joint_cam, double ann_x, double ann_y, const Array& k_inv,
                  bool* degenerate = nullptr);

// Full per-person refinement: the annotation's mean x is first shifted onto
// the detection's projected mean x, then every joint is projected onto its
// annotation ray.
Array refine_pose(const Array& joints_3d, const Array& det_2d, const Array& ann_2d,
                  const Array& intrinsics);

// Rigid xy translation putting the hip at (cx, cy); z untouched.
Array center_pose(const Array& pose, int hip_index, double cx, double cy);

// Rotation of all joints about the world z axis.
Array rotate_about_z(const Array& pose, double yaw);

// Optical camera frame (x right, y down, z depth) to an upright frame
// (x forward, y left, z up) for a level camera.
Array optical_to_upright(const Array& pose_optical);

Array invert_3x3(const Array& m);
Array project_points(const Array& joints_3d, const Array& intrinsics);  // (J,3) -> (J,2)

// The full pipeline: filter, refine, center, rotate, register, window.
std::vector<GlobalPoseSequence> run_extraction(const ExtractionScene& scene,
                                               const ExtractionConfig& cfg, const Skeleton& skel,
                                               ExtractionReport* report = nullptr);

// JSON-lines inputs: detections.jsonl, annotations.jsonl, boxes.jsonl,
// cameras.jsonl inside `dir`.
ExtractionScene load_extraction_inputs(const std::string& dir);
void save_extraction_inputs(const std::string& dir, const ExtractionScene& scene);

}  // namespace t2p
