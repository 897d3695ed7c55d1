#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vispflow/checkpoint.hpp"
#include "vispflow/dataset.hpp"
#include "vispflow/model.hpp"
#include "vispflow/optim.hpp"

namespace vispflow {

struct TrainConfig {
    long steps{2000};
    int batch{16};
    double lr{1e-3};
    long warmup{100};
    double weight_decay{0.0};
    double adam_beta1{0.9};
    double adam_beta2{0.999};
    double adam_eps{1e-8};
    long ckpt_every{500};
    std::uint64_t seed{0};
    std::string out_dir;  // empty -> nothing written to disk
};

struct LossRow {
    long step{0};
    LossParts parts;
    double lr{0.0};
};

struct TrainResult {
    std::vector<LossRow> curve;
    std::string checkpoint_path;
    std::string curve_path;
};

inline std::string loss_curve_csv(const std::vector<LossRow>& curve) {
    std::ostringstream out;
    out.setf(std::ios::scientific);
    out.precision(17);
    out << "step,fm,kld,clip,total,lr\n";
    for (const auto& row : curve)
        out << row.step << "," << row.parts.fm << "," << row.parts.kld << "," << row.parts.clip << ","
            << row.parts.total << "," << row.lr << "\n";
    return out.str();
}

// Balanced batches -> total loss -> tape gradients -> AdamW, with linear
// warmup into cosine decay and per-example condition dropout. Deterministic
// for a given seed; aborts on a non-finite loss.
inline TrainResult train(FlowModel& model, const std::vector<PairRecord>& records,
                         const TrainConfig& tc) {
    if (records.empty()) throw contract_error("train: dataset must be nonempty");
    BalancedBatches sampler(records, tc.batch, tc.seed);
    Rng draw_rng(tc.seed ^ 0x5deece66dULL);

    AdamWState state;
    AdamWConfig adam;
    adam.beta1 = tc.adam_beta1;
    adam.beta2 = tc.adam_beta2;
    adam.eps = tc.adam_eps;
    adam.weight_decay = tc.weight_decay;

    TrainResult result;
    const bool to_disk = !tc.out_dir.empty();
    if (to_disk) std::filesystem::create_directories(tc.out_dir);

    for (long step = 0; step < tc.steps; ++step) {
        const auto batch = sampler.next();
        const auto draws = make_draws(model, batch.size(), draw_rng, model.cfg.p_drop);

        Tape tape;
        auto lv = tape.leaves(model.params);
        const LossGraph graph = total_loss_graph(model, tape, lv, batch, draws);
        const LossParts parts = loss_parts(tape, graph);
        if (!std::isfinite(parts.total)) {
            throw numeric_error("non-finite loss at step " + std::to_string(step) +
                                " (fm=" + std::to_string(parts.fm) +
                                ", kld=" + std::to_string(parts.kld) +
                                ", clip=" + std::to_string(parts.clip) + ")");
        }
        tape.backward(graph.total);

        GradMap grads;
        for (const auto& [path, e] : model.params.entries) {
            if (!e.trainable) continue;
            const Tensor& g = tape.grad(lv.at(path));
            grads.emplace(path, g.numel() ? g : Tensor::zeros(e.value.shape));
        }

        adam.lr = lr_schedule(tc.lr, step, tc.warmup, tc.steps);
        adamw_step(model.params, grads, state, adam);
        result.curve.push_back({step, parts, adam.lr});

        if (to_disk && tc.ckpt_every > 0 && (step + 1) % tc.ckpt_every == 0)
            save_params(model.params, tc.out_dir + "/checkpoint.vpw");
    }

    if (to_disk) {
        result.checkpoint_path = tc.out_dir + "/checkpoint.vpw";
        save_params(model.params, result.checkpoint_path);
        result.curve_path = tc.out_dir + "/loss.csv";
        std::ofstream f(result.curve_path, std::ios::binary);
        const std::string csv = loss_curve_csv(result.curve);
        f.write(csv.data(), static_cast<std::streamsize>(csv.size()));
    }
    return result;
}

}  // namespace vispflow
