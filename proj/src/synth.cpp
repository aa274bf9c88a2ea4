#include "t2p/synth.hpp"

#include <algorithm>
#include <cmath>

#include "t2p/rng.hpp"

namespace t2p {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

struct Walker {
    double px, py;        // hip ground position
    double vx = 0, vy = 0;
    double facing = 0;    // yaw of the body, radians
    double phase = 0;     // gait phase
    double goal_x = 0, goal_y = 0;
    double pref_speed = 1.0;
    double gesture_f1 = 1.0, gesture_f2 = 1.3, gesture_p1 = 0, gesture_p2 = 0;
};

// canonical standing offsets in the facing frame: x forward, y left, z up
struct JointOffset {
    double x, y, z;
};
const JointOffset kBase[15] = {
    {0.00, 0.00, 0.00},    // hip
    {0.00, 0.00, 0.25},    // spine
    {0.00, 0.00, 0.55},    // head
    {0.00, 0.20, 0.45},    // l_shoulder
    {0.00, 0.25, 0.20},    // l_elbow
    {0.00, 0.27, -0.05},   // l_wrist
    {0.00, -0.20, 0.45},   // r_shoulder
    {0.00, -0.25, 0.20},   // r_elbow
    {0.00, -0.27, -0.05},  // r_wrist
    {0.00, 0.10, -0.05},   // l_hip
    {0.00, 0.12, -0.45},   // l_knee
    {0.00, 0.14, -0.85},   // r/l_ankle
    {0.00, -0.10, -0.05},  // r_hip
    {0.00, -0.12, -0.45},  // r_knee
    {0.00, -0.14, -0.85},  // r_ankle
};
constexpr double kHipHeight = 0.92;

void write_pose(Array& positions, int agent, int frame, int frames, const Walker& w,
                double speed, double gesture_t, Rng& jitter, bool gesture) {
    const double swing = 0.22 * std::clamp(speed / 1.2, 0.0, 1.0);
    const double bob = 0.015 * std::clamp(speed / 1.2, 0.0, 1.0) * std::cos(2.0 * w.phase);
    const double c = std::cos(w.facing), s = std::sin(w.facing);
    const double leg = swing * std::sin(w.phase);
    const double arm = -0.6 * leg;

    for (int j = 0; j < 15; ++j) {
        double ox = kBase[j].x, oy = kBase[j].y, oz = kBase[j].z;
        switch (j) {
            case 10: ox += 0.5 * leg; break;   // l_knee
            case 11: ox += leg; oz += 0.03 * std::max(0.0, std::sin(w.phase)) * swing * 4; break;
            case 13: ox += -0.5 * leg; break;  // r_knee
            case 14: ox += -leg; oz += 0.03 * std::max(0.0, -std::sin(w.phase)) * swing * 4; break;
            case 4: ox += 0.5 * arm; break;    // l_elbow
            case 5: ox += arm; break;          // l_wrist
            case 7: ox += -0.5 * arm; break;   // r_elbow
            case 8: ox += -arm; break;         // r_wrist
            default: break;
        }
        if (gesture && (j == 4 || j == 5 || j == 7 || j == 8)) {
            const double wave1 = 0.10 * std::sin(2.0 * kPi * w.gesture_f1 * gesture_t + w.gesture_p1);
            const double wave2 = 0.06 * std::sin(2.0 * kPi * w.gesture_f2 * gesture_t + w.gesture_p2);
            ox += (j <= 5 ? wave1 : wave2);
            oz += (j == 5 || j == 8) ? 0.8 * std::abs(wave1) : 0.3 * std::abs(wave2);
            ox += 0.002 * (jitter.uniform() - 0.5);
            oy += 0.002 * (jitter.uniform() - 0.5);
        }
        const double wx = c * ox - s * oy;
        const double wy = s * ox + c * oy;
        const std::int64_t off = ((static_cast<std::int64_t>(agent) * frames + frame) * 15 + j) * 3;
        positions[off + 0] = w.px + wx;
        positions[off + 1] = w.py + wy;
        positions[off + 2] = kHipHeight + bob + oz;
    }
}

}  // namespace

MotionStyle motion_style_from_string(const std::string& s) {
    if (s == "straight") return MotionStyle::Straight;
    if (s == "turn") return MotionStyle::Turn;
    if (s == "bimodal") return MotionStyle::BimodalFork;
    if (s == "stationary") return MotionStyle::StationaryGesture;
    throw std::invalid_argument("unknown motion style '" + s +
                                "' (expected straight|turn|bimodal|stationary)");
}

std::string motion_style_to_string(MotionStyle s) {
    switch (s) {
        case MotionStyle::Straight: return "straight";
        case MotionStyle::Turn: return "turn";
        case MotionStyle::BimodalFork: return "bimodal";
        case MotionStyle::StationaryGesture: return "stationary";
    }
    return "straight";
}

void SynthSpec::validate() const {
    if (agent_count < 1) throw std::invalid_argument("synth: agent_count must be >= 1");
    if (duration_frames < 2) throw std::invalid_argument("synth: duration_frames must be >= 2");
    if (frame_rate <= 0.0) throw std::invalid_argument("synth: frame_rate must be positive");
}

GlobalPoseSequence generate(const SynthSpec& spec) { return generate_forked(spec, 0); }

GlobalPoseSequence generate_forked(const SynthSpec& spec, int forced_fork) {
    spec.validate();
    Rng rng(spec.seed);
    const int n = spec.agent_count;
    const int frames = spec.duration_frames;
    const double dt = 1.0 / spec.frame_rate;
    const int fork = spec.fork_frame > 0 ? spec.fork_frame : frames / 3;
    const int seeded_dir = rng.uniform() < 0.5 ? -1 : 1;
    const int fork_dir = forced_fork == 0 ? seeded_dir : forced_fork;

    std::vector<Walker> walkers(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Walker& w = walkers[static_cast<size_t>(i)];
        switch (spec.style) {
            case MotionStyle::Straight: {
                // circle crossing: head-on encounters in the middle
                const double ang = 2.0 * kPi * i / n + rng.uniform(-0.1, 0.1);
                const double r = 2.5 + rng.uniform(-0.2, 0.2);
                w.px = r * std::cos(ang);
                w.py = r * std::sin(ang);
                w.goal_x = -w.px;
                w.goal_y = -w.py;
                w.pref_speed = rng.uniform(0.9, 1.2);
                w.facing = std::atan2(w.goal_y - w.py, w.goal_x - w.px);
                break;
            }
            case MotionStyle::Turn: {
                w.px = rng.uniform(-0.3, 0.3);
                w.py = 1.1 * i + rng.uniform(-0.2, 0.2);
                w.pref_speed = rng.uniform(0.8, 1.1);
                w.facing = rng.uniform(-0.1, 0.1);
                break;
            }
            case MotionStyle::BimodalFork: {
                w.px = rng.uniform(-0.2, 0.2);
                w.py = 1.2 * i + rng.uniform(-0.1, 0.1);
                w.pref_speed = rng.uniform(0.95, 1.05);
                w.facing = 0.0;
                break;
            }
            case MotionStyle::StationaryGesture: {
                const double ang = 2.0 * kPi * i / std::max(n, 2);
                const double r = n == 1 ? 0.0 : 1.2;
                w.px = r * std::cos(ang) + rng.uniform(-0.1, 0.1);
                w.py = r * std::sin(ang) + rng.uniform(-0.1, 0.1);
                w.facing = rng.uniform(0.0, 2.0 * kPi);
                w.pref_speed = 0.0;
                break;
            }
        }
        w.phase = rng.uniform(0.0, 2.0 * kPi);
        w.gesture_f1 = rng.uniform(0.5, 1.2);
        w.gesture_f2 = rng.uniform(0.8, 1.6);
        w.gesture_p1 = rng.uniform(0.0, 2.0 * kPi);
        w.gesture_p2 = rng.uniform(0.0, 2.0 * kPi);
    }

    GlobalPoseSequence scene;
    scene.scene_id = "synth_" + motion_style_to_string(spec.style) + "_" + std::to_string(spec.seed);
    scene.frame_rate = spec.frame_rate;
    for (int i = 0; i < n; ++i) scene.agent_ids.push_back("agent_" + std::to_string(i));
    scene.positions = Array({n, frames, 15, 3});

    const bool stationary = spec.style == MotionStyle::StationaryGesture;
    Rng jitter(Rng::mix(spec.seed, 0x6E57));

    for (int f = 0; f < frames; ++f) {
        for (int i = 0; i < n; ++i) {
            Walker& w = walkers[static_cast<size_t>(i)];
            const double speed = std::hypot(w.vx, w.vy);
            write_pose(scene.positions, i, f, frames, w, speed, f * dt, jitter, stationary);
        }
        if (f + 1 == frames) break;
        for (int i = 0; i < n && !stationary; ++i) {
            Walker& w = walkers[static_cast<size_t>(i)];
            double dir_x = 1.0, dir_y = 0.0;
            switch (spec.style) {
                case MotionStyle::Straight: {
                    const double gx = w.goal_x - w.px, gy = w.goal_y - w.py;
                    const double d = std::hypot(gx, gy);
                    if (d > 0.05) { dir_x = gx / d; dir_y = gy / d; }
                    else { dir_x = dir_y = 0.0; }
                    break;
                }
                case MotionStyle::Turn: {
                    const double ang = 0.5 * kPi * f / frames;
                    dir_x = std::cos(ang);
                    dir_y = std::sin(ang);
                    break;
                }
                case MotionStyle::BimodalFork: {
                    if (f < fork) { dir_x = 1.0; dir_y = 0.0; }
                    else {
                        const double remain = (frames - 1 - fork) * dt * w.pref_speed;
                        const double lateral = std::min(0.65 / std::max(remain, 1e-6), 0.7);
                        dir_y = fork_dir * lateral;
                        dir_x = std::sqrt(std::max(1.0 - dir_y * dir_y, 0.0));
                    }
                    break;
                }
                default: break;
            }
            double ax = (dir_x * w.pref_speed - w.vx) / 0.4;
            double ay = (dir_y * w.pref_speed - w.vy) / 0.4;
            for (int k = 0; k < n; ++k) {
                if (k == i) continue;
                const Walker& o = walkers[static_cast<size_t>(k)];
                const double gx = w.px - o.px, gy = w.py - o.py;
                const double d = std::hypot(gx, gy);
                if (d < 1.2 && d > 1e-9) {
                    const double mag = 7.0 * spec.avoidance * (1.2 - d);
                    // radial push plus a fixed-chirality swerve so head-on
                    // walkers slide past each other
                    const double rx = gx / d, ry = gy / d;
                    ax += mag * (0.85 * rx - 0.5 * ry);
                    ay += mag * (0.85 * ry + 0.5 * rx);
                }
            }
            w.vx += ax * dt;
            w.vy += ay * dt;
            const double sp = std::hypot(w.vx, w.vy);
            if (sp > 1.8) { w.vx *= 1.8 / sp; w.vy *= 1.8 / sp; }
            w.px += w.vx * dt;
            w.py += w.vy * dt;
            if (sp > 0.05) w.facing = std::atan2(w.vy, w.vx);
            w.phase += 2.0 * kPi * (0.6 + 1.1 * sp) * dt;
        }
    }
    return scene;
}

std::vector<BimodalScene> generate_bimodal(const SynthSpec& spec, int count) {
    if (count < 1) throw std::invalid_argument("generate_bimodal: count must be >= 1");
    // balanced label pool, shuffled with the seed
    std::vector<int> labels(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) labels[static_cast<size_t>(i)] = i % 2;
    Rng shuffle(Rng::mix(spec.seed, 0xB1D0));
    for (int i = count - 1; i > 0; --i)
        std::swap(labels[static_cast<size_t>(i)],
                  labels[static_cast<size_t>(shuffle.next_below(static_cast<std::uint64_t>(i) + 1))]);

    std::vector<BimodalScene> out;
    for (int i = 0; i < count; ++i) {
        SynthSpec one = spec;
        one.style = MotionStyle::BimodalFork;
        one.seed = Rng::mix(spec.seed, 0xF0C5, static_cast<std::uint64_t>(i));
        const int label = labels[static_cast<size_t>(i)];
        GlobalPoseSequence scene = generate_forked(one, label == 1 ? 1 : -1);
        scene.scene_id = "bimodal_" + std::to_string(spec.seed) + "_" + std::to_string(i);
        out.push_back({std::move(scene), label});
    }
    return out;
}

}  // namespace t2p
