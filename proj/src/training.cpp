#include "t2p/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "t2p/worker_pool.hpp"

namespace t2p {

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw std::invalid_argument("train config: learning_rate must be > 0");
    if (steps < 0) throw std::invalid_argument("train config: steps must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (weight_decay < 0.0) throw std::invalid_argument("train config: weight_decay must be >= 0");
}

SceneLoss compute_loss(Tape& tape, const Model::ForwardVars& fwd,
                       const GlobalPoseSequence& full_scene, const Skeleton& skel,
                       const ModelConfig& cfg) {
    const int tp = cfg.scenario.past_steps;
    const int tf = cfg.scenario.future_steps;
    const int modes = cfg.scenario.modes;
    if (modes < 1) throw std::invalid_argument("compute_loss: needs at least one mode");
    if (full_scene.frames() < tp + tf)
        throw ShapeError("compute_loss: scene '" + full_scene.scene_id + "' has " +
                         std::to_string(full_scene.frames()) + " frames, needs " +
                         std::to_string(tp + tf));

    GlobalPoseSequence future = full_scene.window(tp, tp + tf);
    auto [gt_traj, gt_local] = decompose(future, skel);

    const Array& traj = fwd.traj->v();    // (F, N, T_f, 3)
    const Array& local = fwd.local->v();  // (F, N, T_f, J, 3)
    const int n = traj.dim(1), j = local.dim(3);
    if (traj.dim(0) != modes || traj.dim(2) != tf || local.dim(2) != tf)
        throw ShapeError("compute_loss: forecast shape " + traj.shape_str() +
                         " does not match scenario (modes " + std::to_string(modes) +
                         ", horizon " + std::to_string(tf) + ")");
    if (n != future.agents() || j != future.joints())
        throw ShapeError("compute_loss: forecast covers " + std::to_string(n) + " agents / " +
                         std::to_string(j) + " joints, ground truth has " +
                         std::to_string(future.agents()) + " / " + std::to_string(future.joints()));

    // winner: the mode with minimal L2 distance in the loss's own sense,
    // trajectory and pose terms summed, so min-mode dominance holds exactly
    int best = 0;
    double best_dist = 0.0;
    for (int f = 0; f < modes; ++f) {
        double dist = 0.0;
        for (int a = 0; a < n; ++a)
            for (int s = 0; s < tf; ++s) {
                const std::int64_t tb = ((static_cast<std::int64_t>(f) * n + a) * tf + s) * 3;
                const std::int64_t lb = ((static_cast<std::int64_t>(f) * n + a) * tf + s) * j * 3;
                const std::int64_t gb = (static_cast<std::int64_t>(a) * tf + s) * 3;
                const std::int64_t gl = (static_cast<std::int64_t>(a) * tf + s) * j * 3;
                double sq = 0.0;
                for (int c = 0; c < 3; ++c) {
                    const double d = traj[tb + c] - gt_traj.hip_positions[gb + c];
                    sq += d * d;
                }
                dist += std::sqrt(sq);
                for (int q = 0; q < j; ++q) {
                    double psq = 0.0;
                    for (int c = 0; c < 3; ++c) {
                        const double d = local[lb + q * 3 + c] - gt_local.offsets[gl + q * 3 + c];
                        psq += d * d;
                    }
                    dist += std::sqrt(psq);
                }
            }
        if (f == 0 || dist < best_dist) {
            best = f;
            best_dist = dist;
        }
    }

    Var traj_win = tape.index_axis0(fwd.traj, best);
    Var local_win = tape.index_axis0(fwd.local, best);
    Var l_tr = tape.l2_to_target(traj_win, gt_traj.hip_positions);
    Var l_po = tape.l2_to_target(local_win, gt_local.offsets);  // hip rows contribute zero
    SceneLoss out;
    out.loss = tape.add(l_tr, l_po);
    out.report.trajectory_loss = l_tr->v()[0];
    out.report.pose_loss = l_po->v()[0];
    out.report.total = out.loss->v()[0];
    out.report.winning_mode = best;
    out.report.mode_histogram.assign(static_cast<size_t>(modes), 0);
    out.report.mode_histogram[static_cast<size_t>(best)] = 1;
    return out;
}

namespace {

struct SceneResult {
    std::map<std::string, Array> grads;
    LossReport report;
    bool nan = false;
};

}  // namespace

LossReport train_step(Model& model, const std::vector<const GlobalPoseSequence*>& batch,
                      const TrainConfig& cfg, int step_index) {
    cfg.validate();
    const int b = static_cast<int>(batch.size());
    if (b == 0) throw std::invalid_argument("train_step: empty batch");
    const int modes = model.config().scenario.modes;

    std::vector<SceneResult> results(static_cast<size_t>(b));
    parallel_for(b, [&](int i) {
        Tape tape;
        Rng drop(Rng::mix(cfg.seed, static_cast<std::uint64_t>(step_index),
                          static_cast<std::uint64_t>(i) + 1));
        try {
            Model::ForwardVars fwd = model.forward(tape, *batch[static_cast<size_t>(i)], true, &drop);
            SceneLoss sl = compute_loss(tape, fwd, *batch[static_cast<size_t>(i)], model.skeleton(),
                                        model.config());
            if (!std::isfinite(sl.report.total)) {
                results[static_cast<size_t>(i)].nan = true;
                results[static_cast<size_t>(i)].report = sl.report;
                return;
            }
            tape.backward(sl.loss);
            tape.accumulate_param_grads(results[static_cast<size_t>(i)].grads);
            results[static_cast<size_t>(i)].report = sl.report;
        } catch (const NumericalError&) {
            // re-diagnosed below with per-op checking for a precise culprit
            results[static_cast<size_t>(i)].nan = true;
        }
    });

    for (int i = 0; i < b; ++i) {
        if (!results[static_cast<size_t>(i)].nan) continue;
        // rerun with per-op checking to name the culprit
        Tape tape;
        tape.set_check_numerics(true);
        Rng drop(Rng::mix(cfg.seed, static_cast<std::uint64_t>(step_index),
                          static_cast<std::uint64_t>(i) + 1));
        try {
            Model::ForwardVars fwd = model.forward(tape, *batch[static_cast<size_t>(i)], true, &drop);
            compute_loss(tape, fwd, *batch[static_cast<size_t>(i)], model.skeleton(), model.config());
        } catch (const NumericalError& e) {
            throw NumericalError("train_step " + std::to_string(step_index) + ", scene '" +
                                 batch[static_cast<size_t>(i)]->scene_id + "': " + e.what());
        }
        throw NumericalError("train_step " + std::to_string(step_index) + ": non-finite loss on scene '" +
                             batch[static_cast<size_t>(i)]->scene_id + "'");
    }

    // deterministic merge in batch order, averaged over the batch
    ParameterStore& store = model.params();
    store.zero_grads();
    const double inv = 1.0 / b;
    LossReport avg;
    avg.mode_histogram.assign(static_cast<size_t>(modes), 0);
    for (int i = 0; i < b; ++i) {
        const SceneResult& r = results[static_cast<size_t>(i)];
        for (const auto& [name, g] : r.grads) {
            Array& dst = store.grad(name);
            for (std::int64_t k = 0; k < g.size(); ++k) dst[k] += g[k] * inv;
        }
        avg.trajectory_loss += r.report.trajectory_loss * inv;
        avg.pose_loss += r.report.pose_loss * inv;
        avg.total += r.report.total * inv;
        avg.mode_histogram[static_cast<size_t>(r.report.winning_mode)] += 1;
    }
    avg.winning_mode = static_cast<int>(std::max_element(avg.mode_histogram.begin(),
                                                         avg.mode_histogram.end()) -
                                        avg.mode_histogram.begin());

    AdamwConfig opt;
    opt.lr = cfg.learning_rate;
    opt.weight_decay = cfg.weight_decay;
    store.adamw_step(opt);
    return avg;
}

std::vector<int> batch_indices(int step_index, int dataset_size, int batch_size,
                               std::uint64_t seed) {
    const int per_epoch = (dataset_size + batch_size - 1) / batch_size;
    const int epoch = (step_index - 1) / per_epoch;
    const int slot = (step_index - 1) % per_epoch;
    std::vector<int> perm(static_cast<size_t>(dataset_size));
    for (int i = 0; i < dataset_size; ++i) perm[static_cast<size_t>(i)] = i;
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(epoch), 0xE70C));
    for (int i = dataset_size - 1; i > 0; --i)
        std::swap(perm[static_cast<size_t>(i)],
                  perm[static_cast<size_t>(rng.next_below(static_cast<std::uint64_t>(i) + 1))]);
    const int begin = slot * batch_size;
    const int end = std::min(begin + batch_size, dataset_size);
    return std::vector<int>(perm.begin() + begin, perm.begin() + end);
}

FitResult fit(Model& model, const std::vector<GlobalPoseSequence>& dataset, const TrainConfig& cfg,
              const std::function<void(int, const LossReport&)>& on_step) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("fit: empty dataset");
    FitResult result;
    const int n = static_cast<int>(dataset.size());
    const int first_step = static_cast<int>(model.params().step()) + 1;

    const bool emit = !cfg.out_dir.empty();
    if (emit) std::filesystem::create_directories(cfg.out_dir);
    const std::string ckpt = emit ? cfg.out_dir + "/checkpoint.bin" : "";

    for (int step = first_step; step <= cfg.steps; ++step) {
        const std::vector<int> idx = batch_indices(step, n, cfg.batch_size, cfg.seed);
        std::vector<const GlobalPoseSequence*> batch;
        for (int i : idx) batch.push_back(&dataset[static_cast<size_t>(i)]);
        LossReport rep = train_step(model, batch, cfg, step);
        result.trace.push_back(rep);
        if (on_step) on_step(step, rep);
        if (emit && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
            model.params().save(ckpt);
    }
    if (emit) {
        model.params().save(ckpt);
        result.checkpoint_path = ckpt;
        write_loss_csv(cfg.out_dir + "/loss.csv", result.trace, first_step,
                       model.config().scenario.modes);
    }
    return result;
}

void write_loss_csv(const std::string& path, const std::vector<LossReport>& trace, int first_step,
                    int modes) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os << "step,loss_traj,loss_pose,loss";
    for (int f = 0; f < modes; ++f) os << ",wins_mode" << f;
    os << "\n";
    os.precision(17);
    for (size_t i = 0; i < trace.size(); ++i) {
        os << (first_step + static_cast<int>(i)) << "," << trace[i].trajectory_loss << ","
           << trace[i].pose_loss << "," << trace[i].total;
        for (int f = 0; f < modes; ++f)
            os << "," << (f < static_cast<int>(trace[i].mode_histogram.size())
                              ? trace[i].mode_histogram[static_cast<size_t>(f)]
                              : 0);
        os << "\n";
    }
}

}  // namespace t2p
