#pragma once

#include <string>
#include <vector>

#include "ict/params.hpp"

namespace ict {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Per-parameter Adam moments, aligned with ParamStore entry order.
struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    int64_t t = 0;

    static AdamState init(const ParamStore& params);
};

// theta <- theta - lr * g. Zero gradients leave parameters bit-identical.
void sgd_step(ParamStore& params, const GradStore& grads, double lr);

void adam_step(ParamStore& params, AdamState& state, const GradStore& grads,
               double lr, const AdamConfig& cfg = {});

// Polymorphic wrapper so training loops are optimizer-agnostic.
class Optimizer {
public:
    enum class Kind { Sgd, Adam };

    Optimizer(Kind kind, double lr, const ParamStore& params, AdamConfig cfg = {});
    void step(ParamStore& params, const GradStore& grads);
    Kind kind() const { return kind_; }
    double lr() const { return lr_; }

private:
    Kind kind_;
    double lr_;
    AdamConfig cfg_;
    AdamState state_;
};

}  // namespace ict
