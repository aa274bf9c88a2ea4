#include "t2p/pose_encoder.hpp"

#include "t2p/dct.hpp"

namespace t2p {

namespace {

// (N, T_p, J, 3) -> per part: (N, 3*|part|, T_p) channel layout
Array gather_part_channels(const Array& local, const std::vector<int>& part) {
    const int n = local.dim(0), tp = local.dim(1), j = local.dim(2);
    const int ch = static_cast<int>(part.size()) * 3;
    Array out({n, ch, tp});
    for (int a = 0; a < n; ++a)
        for (size_t q = 0; q < part.size(); ++q) {
            if (part[q] < 0 || part[q] >= j)
                throw ShapeError("body part references joint " + std::to_string(part[q]) +
                                 " outside the scene's joint axis of extent " + std::to_string(j));
            for (int c = 0; c < 3; ++c)
                for (int f = 0; f < tp; ++f)
                    out[(static_cast<std::int64_t>(a) * ch + static_cast<int>(q) * 3 + c) * tp + f] =
                        local[((static_cast<std::int64_t>(a) * tp + f) * j + part[q]) * 3 + c];
        }
    return out;
}

}  // namespace

Var build_mpbp_tokens(NnContext& ctx, const Array& local_rot_past, const Skeleton& skel,
                      const ModelConfig& cfg) {
    Tape& t = ctx.tape;
    const int n = local_rot_past.dim(0);
    const int keep = cfg.kept_coeffs();
    std::vector<Var> tokens;
    for (size_t p = 0; p < skel.parts.size(); ++p) {
        Array channels = gather_part_channels(local_rot_past, skel.parts[p]);
        Array coeffs = dct(replicate_pad(channels, cfg.scenario.future_steps));
        if (keep < cfg.total_steps()) {
            Array cut({coeffs.dim(0), coeffs.dim(1), keep});
            for (int a = 0; a < coeffs.dim(0); ++a)
                for (int c = 0; c < coeffs.dim(1); ++c)
                    for (int k = 0; k < keep; ++k)
                        cut.at({a, c, k}) = coeffs.at({a, c, k});
            coeffs = std::move(cut);
        }
        const int flat = coeffs.dim(1) * coeffs.dim(2);
        Var in = t.reshape(t.input(std::move(coeffs)), {n, flat});
        Var tok = nn_linear(ctx, in, "pose_enc.mpbp" + std::to_string(p), cfg.pose_dim);
        tokens.push_back(t.reshape(tok, {n, 1, cfg.pose_dim}));
    }
    return t.concat(tokens, 1);  // (N, P, pose_dim)
}

PoseEmbedding encode_pose(NnContext& ctx, Var tokens, const ModelConfig& cfg) {
    Var x = tokens;
    for (int b = 0; b < cfg.encoder_blocks; ++b)
        x = nn_encoder_block(ctx, x, "pose_enc.blk" + std::to_string(b), cfg.heads, cfg.d_k,
                             cfg.pose_ffn_hidden, cfg.dropout);
    x = nn_layer_norm(ctx, x, "pose_enc.final_ln", cfg.ln_eps);
    PoseEmbedding out;
    out.per_part = x;
    out.pooled = ctx.tape.mean_axis(x, 1);
    return out;
}

Array pose_channel_coeffs(const Array& local_rot_past, const ModelConfig& cfg) {
    const int n = local_rot_past.dim(0);
    const int tp = local_rot_past.dim(1);
    const int j = local_rot_past.dim(2);
    const int keep = cfg.kept_coeffs();
    // (N, T_p, J, 3) -> (N, J, 3, T_p)
    Array channels({n, j, 3, tp});
    for (int a = 0; a < n; ++a)
        for (int f = 0; f < tp; ++f)
            for (int q = 0; q < j; ++q)
                for (int c = 0; c < 3; ++c)
                    channels.at({a, q, c, f}) = local_rot_past[((static_cast<std::int64_t>(a) * tp + f) * j + q) * 3 + c];
    Array coeffs = dct(replicate_pad(channels, cfg.scenario.future_steps));
    Array out({n, j * 3 * keep});
    const int total = cfg.total_steps();
    for (int a = 0; a < n; ++a)
        for (int q = 0; q < j; ++q)
            for (int c = 0; c < 3; ++c)
                for (int k = 0; k < keep; ++k)
                    out[static_cast<std::int64_t>(a) * (j * 3 * keep) + (q * 3 + c) * keep + k] =
                        coeffs[((static_cast<std::int64_t>(a) * j + q) * 3 + c) * total + k];
    return out;
}

}  // namespace t2p
