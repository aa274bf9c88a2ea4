#pragma once

#include "t2p/interaction.hpp"
#include "t2p/model_config.hpp"
#include "t2p/nn.hpp"

namespace t2p {

// Per-agent temporal summary: a learnable token is prepended to the timestep
// sequence, four self-attention layers run over time, and the token slot's
// output is the summary. `step_mask` (optional, (N, T_p-1), 1 = visible)
// supports variable-length pasts; the token position is always visible.
Var temporal_encode(NnContext& ctx, Var refined, const ModelConfig& cfg,
                    const Array* step_mask = nullptr);

// One message-passing round over agents with relative-geometry edge features
// and the same gated update as the per-timestep graph attention.
Var aggregate_agents(NnContext& ctx, Var summaries, const ScenePrep& prep,
                     const ModelConfig& cfg);

// F mode latents: per-mode MLPs of the aggregated embedding, residually added
// to the repeated pre-aggregation summary. (F, N, traj_dim).
Var span_modes(NnContext& ctx, Var summaries, Var aggregated, const ModelConfig& cfg);

// Agent-frame displacement head, rotated and anchored back into world
// coordinates. (F, N, T_f, 3).
Var trajectory_head(NnContext& ctx, Var latents, Var aggregated, const ScenePrep& prep,
                    const ModelConfig& cfg);

}  // namespace t2p
