#pragma once

#include "t2p/interaction.hpp"
#include "t2p/model_config.hpp"
#include "t2p/motion.hpp"
#include "t2p/nn.hpp"

namespace t2p {

struct PoseEmbedding {
    Var per_part;  // (N, P, pose_dim)
    Var pooled;    // (N, pose_dim), mean over parts
};

// One token per (agent, body part): the part's frame-normalized joint channels
// are replicate-padded over the horizon, transformed to the frequency domain,
// flattened and projected to pose_dim. The heavy lifting happens on constant
// inputs; only the projection is learnable.
Var build_mpbp_tokens(NnContext& ctx, const Array& local_rot_past, const Skeleton& skel,
                      const ModelConfig& cfg);

// Intra-agent transformer over the part tokens; no cross-agent attention.
PoseEmbedding encode_pose(NnContext& ctx, Var tokens, const ModelConfig& cfg);

// Frequency coefficients of the padded past, used by the pose decoder as the
// residual base: (N, J*3*kept_coeffs) in joint-major layout.
Array pose_channel_coeffs(const Array& local_rot_past, const ModelConfig& cfg);

}  // namespace t2p
