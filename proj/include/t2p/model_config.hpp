#pragma once

#include <string>

#include "t2p/motion.hpp"

namespace t2p {

// Network dimensions. The scenario block is what varies between experiments;
// the rest are architecture constants surfaced for completeness.
struct ModelConfig {
    ScenarioConfig scenario;

    int pose_dim = 128;
    int traj_dim = 96;
    int heads = 8;
    int d_k = 64;
    int encoder_blocks = 2;      // pose encoder depth
    int decoder_blocks = 2;      // pose decoder depth
    int temporal_layers = 4;     // trajectory decoder temporal encoder depth
    int pose_ffn_hidden = 1024;
    int traj_ffn_hidden = 384;
    int pose_head_hidden = 256;
    double dropout = 0.2;
    double ln_eps = 1e-6;
    int dct_coeffs = 0;          // 0 keeps all T_p+T_f coefficients
    // Output heads emit scale * raw; with the unsquared-distance losses the
    // gradient magnitude never decays, so this sets the optimizer's
    // oscillation floor in output units.
    double head_scale = 0.1;

    int total_steps() const { return scenario.past_steps + scenario.future_steps; }
    int kept_coeffs() const {
        const int total = total_steps();
        return dct_coeffs <= 0 || dct_coeffs > total ? total : dct_coeffs;
    }

    std::string canonical_string() const;
    void validate() const;
};

}  // namespace t2p
