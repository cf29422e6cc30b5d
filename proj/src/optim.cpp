#include "ict/optim.hpp"

#include <cmath>

#include "ict/errors.hpp"

namespace ict {

namespace {
void check_congruent(const ParamStore& params, const GradStore& grads) {
    if (params.entries.size() != grads.size())
        throw ContractError("optimizer: gradient store size mismatch");
    for (size_t i = 0; i < grads.size(); ++i) {
        if (params.entries[i].first != grads[i].first ||
            params.entries[i].second.shape != grads[i].second.shape)
            throw ContractError("optimizer: gradient not congruent at " +
                                params.entries[i].first);
        if (!grads[i].second.all_finite())
            throw DivergenceError("non-finite gradient for parameter " + grads[i].first);
    }
}
}  // namespace

AdamState AdamState::init(const ParamStore& params) {
    AdamState s;
    s.m.reserve(params.entries.size());
    s.v.reserve(params.entries.size());
    for (const auto& [name, t] : params.entries) {
        s.m.push_back(Tensor::zeros(t.shape));
        s.v.push_back(Tensor::zeros(t.shape));
    }
    return s;
}

void sgd_step(ParamStore& params, const GradStore& grads, double lr) {
    if (lr < 0.0) throw ContractError("sgd_step: negative learning rate");
    check_congruent(params, grads);
    for (size_t i = 0; i < grads.size(); ++i) {
        auto& p = params.entries[i].second.data;
        const auto& g = grads[i].second.data;
        for (size_t j = 0; j < p.size(); ++j)
            if (g[j] != 0.0) p[j] -= lr * g[j];
    }
    ++params.step_count;
}

void adam_step(ParamStore& params, AdamState& state, const GradStore& grads,
               double lr, const AdamConfig& cfg) {
    if (lr < 0.0) throw ContractError("adam_step: negative learning rate");
    check_congruent(params, grads);
    if (state.m.size() != params.entries.size())
        throw ContractError("adam_step: state not initialized for this store");
    ++state.t;
    double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
    double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
    for (size_t i = 0; i < grads.size(); ++i) {
        auto& p = params.entries[i].second.data;
        const auto& g = grads[i].second.data;
        auto& m = state.m[i].data;
        auto& v = state.v[i].data;
        for (size_t j = 0; j < p.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
    ++params.step_count;
}

Optimizer::Optimizer(Kind kind, double lr, const ParamStore& params, AdamConfig cfg)
    : kind_(kind), lr_(lr), cfg_(cfg) {
    if (kind_ == Kind::Adam) state_ = AdamState::init(params);
}

void Optimizer::step(ParamStore& params, const GradStore& grads) {
    if (kind_ == Kind::Sgd)
        sgd_step(params, grads, lr_);
    else
        adam_step(params, state_, grads, lr_, cfg_);
}

}  // namespace ict
