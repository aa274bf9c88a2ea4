#pragma once

#include <string>
#include <vector>

#include "t2p/array.hpp"

namespace t2p {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Joint layout and the five-part body partition feeding the body-part tokens.
struct Skeleton {
    int joint_count = 0;
    int hip_index = 0;
    std::vector<std::vector<int>> parts;  // torso, left arm, right arm, left leg, right leg
    std::vector<std::string> joint_names;

    void validate() const;  // partition covers all joints exactly once, hip in torso
    static Skeleton default15();
};

// World-frame joint positions for one scene: (N_A, T, J, 3) in meters.
struct GlobalPoseSequence {
    std::string scene_id;
    Array positions;                     // (N_A, T, J, 3)
    std::vector<std::string> agent_ids;  // stable track labels, size N_A
    double frame_rate = 10.0;

    int agents() const { return positions.rank() == 4 ? positions.dim(0) : 0; }
    int frames() const { return positions.rank() == 4 ? positions.dim(1) : 0; }
    int joints() const { return positions.rank() == 4 ? positions.dim(2) : 0; }
    void validate() const;

    // Frame-window copy [begin, end).
    GlobalPoseSequence window(int begin, int end) const;
};

// Hip-joint world positions over time: (N_A, T, 3).
struct TrajectorySequence {
    Array hip_positions;
    int agents() const { return hip_positions.dim(0); }
    int frames() const { return hip_positions.dim(1); }
};

// Joint offsets relative to the same-frame hip: (N_A, T, J, 3). The hip row is
// identically zero.
struct LocalPoseSequence {
    Array offsets;
    int agents() const { return offsets.dim(0); }
    int frames() const { return offsets.dim(1); }
    int joints() const { return offsets.dim(2); }
};

struct ScenarioConfig {
    int past_steps = 10;        // T_p
    int future_steps = 20;      // T_f
    int modes = 6;              // F
    double interaction_radius = -1.0;  // < 0 means unbounded

    bool radius_unbounded() const { return interaction_radius < 0.0; }
    void validate() const;
};

// Splits a scene into the hip trajectory and hip-relative local pose.
// recompose(decompose(s)) reproduces s bit-exactly.
std::pair<TrajectorySequence, LocalPoseSequence> decompose(const GlobalPoseSequence& scene,
                                                           const Skeleton& skel);

GlobalPoseSequence recompose(const TrajectorySequence& traj, const LocalPoseSequence& local,
                             const GlobalPoseSequence& like);

// Yaw about the world z axis followed by an xy shift; z untouched.
GlobalPoseSequence apply_se2(const GlobalPoseSequence& scene, double yaw, double shift_x,
                             double shift_y);
Array se2_points(const Array& pts, double yaw, double shift_x, double shift_y);

// Scene files hold one JSON object per line:
//   {"scene_id":..., "frame_rate":..., "agents":[{"id":..., "joints":[[[x,y,z] x J] x T]}]}
std::vector<GlobalPoseSequence> load_scenes(const std::string& path);
void save_scenes(const std::string& path, const std::vector<GlobalPoseSequence>& scenes);
std::string scene_to_json_line(const GlobalPoseSequence& scene);
GlobalPoseSequence scene_from_json_line(const std::string& line, int line_number = -1);

// Skeleton files: {"joint_names":[...], "hip_index":..., "parts":[[...] x 5]}
Skeleton load_skeleton(const std::string& path);
void save_skeleton(const std::string& path, const Skeleton& skel);

}  // namespace t2p
