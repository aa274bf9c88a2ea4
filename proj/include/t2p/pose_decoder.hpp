#pragma once

#include "t2p/interaction.hpp"
#include "t2p/model_config.hpp"
#include "t2p/pose_encoder.hpp"

namespace t2p {

// Trajectory-conditioned local pose forecast. The query fuses the pooled pose
// embedding (repeated per mode) with each mode's trajectory latent; two
// cross-attention layers read the agent's own part tokens; three fully
// connected layers emit frequency-coefficient residuals over the padded past.
// Output: (F, N, T_f, J, 3) world-axis hip-relative offsets, hip row zero.
Var decode_poses(NnContext& ctx, const PoseEmbedding& pose, Var latents, const ScenePrep& prep,
                 const Skeleton& skel, const ModelConfig& cfg);

}  // namespace t2p
