#pragma once

#include <cmath>
#include <map>
#include <string>

#include "vispflow/autograd.hpp"
#include "vispflow/tensor.hpp"

namespace vispflow {

struct AdamWConfig {
    double lr{1e-4};
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};
    double weight_decay{0.0};
};

// First/second moments plus the shared step counter.
struct AdamWState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    long step{0};
};

// Decoupled-weight-decay AdamW with bias correction. Frozen parameters are
// never touched; moments are created lazily as zeros.
inline void adamw_step(ParamSet& params, const GradMap& grads, AdamWState& state,
                       const AdamWConfig& cfg) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (auto& [path, e] : params.entries) {
        if (!e.trainable) continue;
        auto git = grads.find(path);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        check_same_shape(e.value, g, "adamw_step");
        Tensor& m = state.m.try_emplace(path, Tensor::zeros(e.value.shape)).first->second;
        Tensor& v = state.v.try_emplace(path, Tensor::zeros(e.value.shape)).first->second;
        for (std::size_t i = 0; i < e.value.numel(); ++i) {
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g.data[i];
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            e.value.data[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                                         cfg.weight_decay * e.value.data[i]);
        }
    }
}

// Linear warmup to the base rate, then cosine decay to zero. Step 0 during
// warmup gets rate 0; the end of warmup gets exactly the base rate.
inline double lr_schedule(double base_lr, long step, long warmup_steps, long total_steps) {
    if (warmup_steps > 0 && step < warmup_steps)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (total_steps <= warmup_steps) return base_lr;
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace vispflow
