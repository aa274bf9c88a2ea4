#pragma once

#include <functional>
#include <string>
#include <vector>

#include "t2p/model.hpp"

namespace t2p {

struct LossReport {
    double trajectory_loss = 0.0;  // summed hip L2 over agents and future steps
    double pose_loss = 0.0;        // summed non-hip local L2
    double total = 0.0;
    int winning_mode = 0;
    std::vector<int> mode_histogram;  // winners per batch, size F
};

struct TrainConfig {
    double learning_rate = 0.003;
    double weight_decay = 0.01;
    int steps = 2000;
    int batch_size = 4;
    std::uint64_t seed = 0;
    int checkpoint_every = 500;
    std::string out_dir;  // when set: loss CSV + checkpoints land here

    void validate() const;
};

struct SceneLoss {
    Var loss = nullptr;
    LossReport report;
};

// Winner-takes-all objective: the mode with minimal total joint distance of
// the composed forecast wins; trajectory and pose losses are evaluated on that
// mode only, so no gradient reaches the other modes.
SceneLoss compute_loss(Tape& tape, const Model::ForwardVars& fwd,
                       const GlobalPoseSequence& full_scene, const Skeleton& skel,
                       const ModelConfig& cfg);

// Forward/backward over one batch with scene-parallel workers, then one AdamW
// step. Gradients merge in batch order, so results do not depend on
// scheduling. Aborts with NumericalError naming the first NaN-producing op.
LossReport train_step(Model& model, const std::vector<const GlobalPoseSequence*>& batch,
                      const TrainConfig& cfg, int step_index);

struct FitResult {
    std::vector<LossReport> trace;
    std::string checkpoint_path;
};

// Seeded shuffled mini-batches; batch composition for any step is a pure
// function of (seed, dataset size, batch size), so a resumed run continues the
// same stream. Writes loss.csv and periodic checkpoints when out_dir is set.
FitResult fit(Model& model, const std::vector<GlobalPoseSequence>& dataset, const TrainConfig& cfg,
              const std::function<void(int, const LossReport&)>& on_step = nullptr);

// The deterministic batch schedule, exposed for the resume-equivalence tests.
std::vector<int> batch_indices(int step_index, int dataset_size, int batch_size,
                               std::uint64_t seed);

void write_loss_csv(const std::string& path, const std::vector<LossReport>& trace,
                    int first_step, int modes);

}  // namespace t2p
