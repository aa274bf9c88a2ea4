#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "t2p/motion.hpp"

namespace t2p {

enum class MotionStyle { Straight, Turn, BimodalFork, StationaryGesture };

MotionStyle motion_style_from_string(const std::string& s);
std::string motion_style_to_string(MotionStyle s);

struct SynthSpec {
    int agent_count = 3;
    int duration_frames = 30;
    double frame_rate = 10.0;
    MotionStyle style = MotionStyle::Straight;
    double avoidance = 1.0;  // social-repulsion strength scale
    std::uint64_t seed = 0;
    int fork_frame = -1;  // bimodal fork point; default duration/3

    void validate() const;
};

// Articulated walkers: hip trajectories from a social-repulsion point model
// (repulsion inside 1 m, relaxation toward goals), local pose from a
// speed-locked sinusoidal gait. Deterministic under the seed.
GlobalPoseSequence generate(const SynthSpec& spec);

// Same, with the bimodal fork direction forced (-1 or +1; 0 derives it from
// the seed as generate() does).
GlobalPoseSequence generate_forked(const SynthSpec& spec, int fork_dir);

struct BimodalScene {
    GlobalPoseSequence scene;
    int fork_label = 0;  // 0 = left, 1 = right
};

// Balanced left/right fork populations: pasts share one distribution, futures
// diverge laterally by at least a meter between the two labels.
std::vector<BimodalScene> generate_bimodal(const SynthSpec& spec, int count);

}  // namespace t2p
