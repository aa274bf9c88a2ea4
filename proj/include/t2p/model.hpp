#pragma once

#include <cstdint>
#include <string>

#include "t2p/interaction.hpp"
#include "t2p/model_config.hpp"
#include "t2p/motion.hpp"
#include "t2p/params.hpp"
#include "t2p/pose_encoder.hpp"

namespace t2p {

// F-mode forecast in plain arrays: world-frame hip trajectories, hip-relative
// local poses, and their joint-wise composition.
struct ForecastBundle {
    std::string scene_id;
    std::vector<std::string> agent_ids;
    double frame_rate = 10.0;
    Array trajectories;  // (F, N, T_f, 3)
    Array local;         // (F, N, T_f, J, 3)
    Array composed;      // (F, N, T_f, J, 3)

    int modes() const { return trajectories.dim(0); }
    int agents() const { return trajectories.dim(1); }
    int horizon() const { return trajectories.dim(2); }
    int joints() const { return local.dim(3); }
};

// composed[f,n,t,j] = traj[f,n,t] + local[f,n,t,j]
Array compose_forecast(const Array& trajectories, const Array& local);

class Model {
public:
    // Fresh parameters, created in a fixed order from the seed.
    Model(ModelConfig cfg, Skeleton skel, std::uint64_t seed);
    // Parameters taken from an existing store (checkpoint load).
    Model(ModelConfig cfg, Skeleton skel, ParameterStore store);

    struct ForwardVars {
        Var traj = nullptr;   // (F, N, T_f, 3)
        Var local = nullptr;  // (F, N, T_f, J, 3)
        std::int64_t pair_scores = 0;
        ScenePrep prep;
    };

    // Differentiable forward over the first T_p frames of `past`.
    ForwardVars forward(Tape& tape, const GlobalPoseSequence& past, bool training,
                        Rng* dropout_rng);

    // Inference convenience; runs a private tape and extracts values.
    ForecastBundle predict(const GlobalPoseSequence& past);

    const ModelConfig& config() const { return cfg_; }
    const Skeleton& skeleton() const { return skel_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }

private:
    void build_parameters(std::uint64_t seed);

    ModelConfig cfg_;
    Skeleton skel_;
    ParameterStore store_;
};

}  // namespace t2p
