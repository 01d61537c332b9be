#pragma once

#include <map>
#include <string>

#include "hada/tensor.hpp"

namespace hada {

// Named parameter set. std::map keeps iteration order stable, which the
// determinism contract relies on.
using ParamSet = std::map<std::string, Tensor>;
using GradSet = std::map<std::string, Tensor>;

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.02;
};

// Decoupled weight decay (param -= lr*wd*param) followed by the
// bias-corrected Adam update.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamSet& params, const GradSet& grads, double lr);
    long step_count() const { return step_; }

    const AdamWConfig& config() const { return cfg_; }

private:
    struct Moments {
        Tensor m;
        Tensor v;
    };
    AdamWConfig cfg_;
    std::map<std::string, Moments> slots_;
    long step_ = 0;
};

struct CosineSchedule {
    double lr_max = 1e-4;
    double lr_min = 5e-6;
    long total_steps = 1;
};

// lr_min + 0.5*(lr_max-lr_min)*(1+cos(pi*step/total)); out-of-range steps
// clamp to the endpoint.
double cosine_lr(const CosineSchedule& sched, long step);

}  // namespace hada
