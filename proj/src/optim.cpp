#include "hada/optim.hpp"

#include <cmath>
#include <iostream>

namespace hada {

void AdamW::step(ParamSet& params, const GradSet& grads, double lr) {
    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;  // parameter frozen this step
        const Tensor& g = git->second;
        if (!g.same_shape(p)) {
            throw ShapeError("adamw: grad shape " + shape_str(g.shape) + " vs param " +
                             shape_str(p.shape) + " for " + name);
        }
        if (!g.all_finite()) {
            throw NumericError("adamw: non-finite gradient for '" + name + "' at step " +
                               std::to_string(step_));
        }
        auto slot = slots_.find(name);
        if (slot == slots_.end()) {
            slot = slots_.emplace(name, Moments{Tensor::zeros(p.shape), Tensor::zeros(p.shape)}).first;
        }
        Tensor& m = slot->second.m;
        Tensor& v = slot->second.v;
        for (std::size_t i = 0; i < p.size(); ++i) {
            p.data[i] -= lr * cfg_.weight_decay * p.data[i];
            m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g.data[i];
            v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g.data[i] * g.data[i];
            double mhat = m.data[i] / bc1;
            double vhat = v.data[i] / bc2;
            p.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

double cosine_lr(const CosineSchedule& sched, long step) {
    if (step < 0) {
        std::cerr << "cosine_lr: step " << step << " below range, clamping to 0\n";
        step = 0;
    }
    if (step > sched.total_steps) {
        std::cerr << "cosine_lr: step " << step << " beyond total " << sched.total_steps
                  << ", clamping\n";
        step = sched.total_steps;
    }
    double frac = static_cast<double>(step) / static_cast<double>(sched.total_steps);
    return sched.lr_min + 0.5 * (sched.lr_max - sched.lr_min) * (1.0 + std::cos(M_PI * frac));
}

}  // namespace hada
