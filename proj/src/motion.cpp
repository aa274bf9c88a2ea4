#include "t2p/motion.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace t2p {

using nlohmann::json;

void Skeleton::validate() const {
    if (joint_count < 1) throw ShapeError("skeleton: joint_count must be >= 1");
    if (parts.size() != 5) throw ShapeError("skeleton: expected 5 body parts, got " + std::to_string(parts.size()));
    std::set<int> seen;
    for (const auto& part : parts)
        for (int j : part) {
            if (j < 0 || j >= joint_count)
                throw ShapeError("skeleton: part references joint " + std::to_string(j) +
                                 " outside [0," + std::to_string(joint_count) + ")");
            if (!seen.insert(j).second)
                throw ShapeError("skeleton: joint " + std::to_string(j) + " appears in two parts");
        }
    if (static_cast<int>(seen.size()) != joint_count)
        throw ShapeError("skeleton: partition covers " + std::to_string(seen.size()) + " of " +
                         std::to_string(joint_count) + " joints");
    bool hip_in_torso = false;
    for (int j : parts[0])
        if (j == hip_index) hip_in_torso = true;
    if (!hip_in_torso) throw ShapeError("skeleton: hip_index must belong to the torso part");
}

Skeleton Skeleton::default15() {
    Skeleton s;
    s.joint_count = 15;
    s.hip_index = 0;
    s.joint_names = {"hip",        "spine",   "head",    "l_shoulder", "l_elbow",
                     "l_wrist",    "r_shoulder", "r_elbow", "r_wrist", "l_hip",
                     "l_knee",     "l_ankle", "r_hip",   "r_knee",     "r_ankle"};
    s.parts = {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}, {9, 10, 11}, {12, 13, 14}};
    s.validate();
    return s;
}

void GlobalPoseSequence::validate() const {
    if (positions.rank() != 4 || positions.dim(3) != 3)
        throw ShapeError("scene '" + scene_id + "': positions must be (agents, frames, joints, 3), got " +
                         positions.shape_str());
    if (agents() < 1) throw ShapeError("scene '" + scene_id + "': needs at least one agent");
    if (frames() < 1) throw ShapeError("scene '" + scene_id + "': needs at least one frame");
    if (static_cast<int>(agent_ids.size()) != agents())
        throw ShapeError("scene '" + scene_id + "': agent_ids size " + std::to_string(agent_ids.size()) +
                         " does not match agent axis " + std::to_string(agents()));
    if (!positions.all_finite())
        throw ShapeError("scene '" + scene_id + "': non-finite joint coordinate");
    if (frame_rate <= 0.0) throw ShapeError("scene '" + scene_id + "': frame_rate must be positive");
}

GlobalPoseSequence GlobalPoseSequence::window(int begin, int end) const {
    if (begin < 0 || begin >= end || end > frames())
        throw ShapeError("scene '" + scene_id + "': window [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside frame axis of extent " + std::to_string(frames()));
    GlobalPoseSequence out;
    out.scene_id = scene_id;
    out.agent_ids = agent_ids;
    out.frame_rate = frame_rate;
    const int n = agents(), j = joints(), t = end - begin;
    out.positions = Array({n, t, j, 3});
    const std::int64_t row = static_cast<std::int64_t>(j) * 3;
    for (int a = 0; a < n; ++a)
        for (int f = 0; f < t; ++f)
            for (std::int64_t c = 0; c < row; ++c)
                out.positions[(static_cast<std::int64_t>(a) * t + f) * row + c] =
                    positions[(static_cast<std::int64_t>(a) * frames() + begin + f) * row + c];
    return out;
}

void ScenarioConfig::validate() const {
    if (past_steps < 2) throw ShapeError("scenario: past_steps must be >= 2");
    if (future_steps < 1) throw ShapeError("scenario: future_steps must be >= 1");
    if (modes < 1) throw ShapeError("scenario: modes must be >= 1");
}

std::pair<TrajectorySequence, LocalPoseSequence> decompose(const GlobalPoseSequence& scene,
                                                           const Skeleton& skel) {
    if (scene.joints() != skel.joint_count)
        throw ShapeError("decompose: scene joint axis " + std::to_string(scene.joints()) +
                         " does not match skeleton joint_count " + std::to_string(skel.joint_count));
    const int n = scene.agents(), t = scene.frames(), j = scene.joints();
    const int hip = skel.hip_index;

    TrajectorySequence traj;
    traj.hip_positions = Array({n, t, 3});
    LocalPoseSequence local;
    local.offsets = Array({n, t, j, 3});

    for (int a = 0; a < n; ++a)
        for (int f = 0; f < t; ++f) {
            const std::int64_t base = (static_cast<std::int64_t>(a) * t + f) * j * 3;
            const double hx = scene.positions[base + hip * 3 + 0];
            const double hy = scene.positions[base + hip * 3 + 1];
            const double hz = scene.positions[base + hip * 3 + 2];
            const std::int64_t tb = (static_cast<std::int64_t>(a) * t + f) * 3;
            traj.hip_positions[tb + 0] = hx;
            traj.hip_positions[tb + 1] = hy;
            traj.hip_positions[tb + 2] = hz;
            for (int q = 0; q < j; ++q) {
                local.offsets[base + q * 3 + 0] = scene.positions[base + q * 3 + 0] - hx;
                local.offsets[base + q * 3 + 1] = scene.positions[base + q * 3 + 1] - hy;
                local.offsets[base + q * 3 + 2] = scene.positions[base + q * 3 + 2] - hz;
            }
        }
    return {std::move(traj), std::move(local)};
}

GlobalPoseSequence recompose(const TrajectorySequence& traj, const LocalPoseSequence& local,
                             const GlobalPoseSequence& like) {
    if (traj.agents() != local.agents() || traj.frames() != local.frames())
        throw ShapeError("recompose: trajectory (" + traj.hip_positions.shape_str() +
                         ") and local pose (" + local.offsets.shape_str() + ") disagree on agents/frames");
    const int n = traj.agents(), t = traj.frames(), j = local.joints();
    GlobalPoseSequence out;
    out.scene_id = like.scene_id;
    out.agent_ids = like.agent_ids;
    out.frame_rate = like.frame_rate;
    out.positions = Array({n, t, j, 3});
    for (int a = 0; a < n; ++a)
        for (int f = 0; f < t; ++f) {
            const std::int64_t tb = (static_cast<std::int64_t>(a) * t + f) * 3;
            const std::int64_t base = (static_cast<std::int64_t>(a) * t + f) * j * 3;
            for (int q = 0; q < j; ++q)
                for (int c = 0; c < 3; ++c)
                    out.positions[base + q * 3 + c] = traj.hip_positions[tb + c] + local.offsets[base + q * 3 + c];
        }
    return out;
}

Array se2_points(const Array& pts, double yaw, double shift_x, double shift_y) {
    Array out = pts;
    const double c = std::cos(yaw), s = std::sin(yaw);
    for (std::int64_t i = 0; i + 3 <= pts.size(); i += 3) {
        const double x = pts[i + 0], y = pts[i + 1];
        out[i + 0] = c * x - s * y + shift_x;
        out[i + 1] = s * x + c * y + shift_y;
    }
    return out;
}

GlobalPoseSequence apply_se2(const GlobalPoseSequence& scene, double yaw, double shift_x,
                             double shift_y) {
    GlobalPoseSequence out = scene;
    out.positions = se2_points(scene.positions, yaw, shift_x, shift_y);
    return out;
}

std::string scene_to_json_line(const GlobalPoseSequence& scene) {
    json o;
    o["scene_id"] = scene.scene_id;
    o["frame_rate"] = scene.frame_rate;
    json agents = json::array();
    const int t = scene.frames(), j = scene.joints();
    for (int a = 0; a < scene.agents(); ++a) {
        json ag;
        ag["id"] = scene.agent_ids[static_cast<size_t>(a)];
        json frames = json::array();
        for (int f = 0; f < t; ++f) {
            json joints = json::array();
            for (int q = 0; q < j; ++q) {
                const std::int64_t base = ((static_cast<std::int64_t>(a) * t + f) * j + q) * 3;
                joints.push_back({scene.positions[base], scene.positions[base + 1], scene.positions[base + 2]});
            }
            frames.push_back(std::move(joints));
        }
        ag["joints"] = std::move(frames);
        agents.push_back(std::move(ag));
    }
    o["agents"] = std::move(agents);
    return o.dump();
}

GlobalPoseSequence scene_from_json_line(const std::string& line, int line_number) {
    json o;
    try {
        o = json::parse(line);
    } catch (const json::exception& e) {
        throw std::runtime_error("scene file: malformed JSON" +
                                 (line_number >= 0 ? " at line " + std::to_string(line_number) : "") +
                                 ": " + e.what());
    }
    GlobalPoseSequence scene;
    scene.scene_id = o.at("scene_id").get<std::string>();
    scene.frame_rate = o.at("frame_rate").get<double>();
    const auto& agents = o.at("agents");
    if (agents.empty()) throw std::runtime_error("scene '" + scene.scene_id + "': no agents");
    const int n = static_cast<int>(agents.size());
    const int t = static_cast<int>(agents[0].at("joints").size());
    const int j = t > 0 ? static_cast<int>(agents[0].at("joints")[0].size()) : 0;
    scene.positions = Array({n, t, j, 3});
    for (int a = 0; a < n; ++a) {
        scene.agent_ids.push_back(agents[static_cast<size_t>(a)].at("id").get<std::string>());
        const auto& frames = agents[static_cast<size_t>(a)].at("joints");
        if (static_cast<int>(frames.size()) != t)
            throw std::runtime_error("scene '" + scene.scene_id + "': agent " + std::to_string(a) +
                                     " has " + std::to_string(frames.size()) + " frames, expected " +
                                     std::to_string(t));
        for (int f = 0; f < t; ++f) {
            const auto& joints = frames[static_cast<size_t>(f)];
            if (static_cast<int>(joints.size()) != j)
                throw std::runtime_error("scene '" + scene.scene_id + "': ragged joint axis");
            for (int q = 0; q < j; ++q)
                for (int c = 0; c < 3; ++c)
                    scene.positions[((static_cast<std::int64_t>(a) * t + f) * j + q) * 3 + c] =
                        joints[static_cast<size_t>(q)][static_cast<size_t>(c)].get<double>();
        }
    }
    scene.validate();
    return scene;
}

std::vector<GlobalPoseSequence> load_scenes(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open scene file '" + path + "'");
    std::vector<GlobalPoseSequence> scenes;
    std::string line;
    int ln = 0;
    while (std::getline(is, line)) {
        ++ln;
        if (line.empty()) continue;
        scenes.push_back(scene_from_json_line(line, ln));
    }
    return scenes;
}

void save_scenes(const std::string& path, const std::vector<GlobalPoseSequence>& scenes) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    for (const auto& s : scenes) os << scene_to_json_line(s) << "\n";
    if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

Skeleton load_skeleton(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open skeleton file '" + path + "'");
    json o = json::parse(is);
    Skeleton s;
    s.joint_names = o.at("joint_names").get<std::vector<std::string>>();
    s.joint_count = static_cast<int>(s.joint_names.size());
    s.hip_index = o.at("hip_index").get<int>();
    s.parts = o.at("parts").get<std::vector<std::vector<int>>>();
    s.validate();
    return s;
}

void save_skeleton(const std::string& path, const Skeleton& skel) {
    json o;
    o["joint_names"] = skel.joint_names;
    o["hip_index"] = skel.hip_index;
    o["parts"] = skel.parts;
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << o.dump(2) << "\n";
}

}  // namespace t2p
