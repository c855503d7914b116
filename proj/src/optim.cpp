#include "autolc/optim.hpp"

#include <cmath>

namespace autolc {

void LrSchedule::validate() const {
    AUTOLC_CHECK(initial >= final && final >= 0.0, "lr schedule: need initial >= final >= 0");
    AUTOLC_CHECK(warmup_steps >= 0 && warmup_steps < total_steps,
                 "lr schedule: need 0 <= warmup_steps < total_steps");
    AUTOLC_CHECK(total_steps >= 1, "lr schedule: total_steps must be positive");
}

double lr_at(const LrSchedule& s, i64 step) {
    s.validate();
    if (step < 0 || step > s.total_steps)
        throw ValueError("lr_at: step " + std::to_string(step) + " out of range [0, " +
                         std::to_string(s.total_steps) + "]");
    if (s.kind == LrKind::constant) return s.initial;
    if (step < s.warmup_steps)
        return s.initial * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    double t = static_cast<double>(step - s.warmup_steps) /
               static_cast<double>(s.total_steps - s.warmup_steps);
    if (s.kind == LrKind::cosine)
        return s.final + (s.initial - s.final) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
    return s.initial * std::pow(1.0 - t, s.power);
}

namespace {

std::vector<double> grad_as_doubles(const Tensor& p) {
    std::vector<double> g(static_cast<size_t>(p.numel()), 0.0);
    if (p.has_grad())
        for (i64 i = 0; i < p.numel(); ++i) g[static_cast<size_t>(i)] = p.grad_at(i);
    return g;
}

Tensor state_to_tensor(const std::vector<double>& v) {
    return Tensor::from_vector({static_cast<i64>(v.size())}, v, Dtype::f64);
}

}  // namespace

void SgdMomentum::step(const std::vector<Tensor>& params, double lr) {
    AUTOLC_CHECK(lr > 0.0, "sgd: lr must be positive");
    for (const Tensor& p : params) {
        auto& v = velocity_[p.impl().get()];
        if (v.empty()) v.assign(static_cast<size_t>(p.numel()), 0.0);
        AUTOLC_CHECK(static_cast<i64>(v.size()) == p.numel(), "sgd: state shape mismatch");
        std::vector<double> g = grad_as_doubles(p);
        for (i64 i = 0; i < p.numel(); ++i) {
            size_t k = static_cast<size_t>(i);
            double gi = g[k] + weight_decay_ * p.at(i);
            v[k] = momentum_ * v[k] + gi;
            p.set(i, p.at(i) - lr * v[k]);
        }
    }
}

std::map<std::string, Tensor> SgdMomentum::state(
    const std::vector<std::pair<std::string, Tensor>>& named) const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, p] : named) {
        auto it = velocity_.find(p.impl().get());
        if (it != velocity_.end()) out["sgd.v." + name] = state_to_tensor(it->second);
    }
    return out;
}

void SgdMomentum::load_state(const std::vector<std::pair<std::string, Tensor>>& named,
                             const std::map<std::string, Tensor>& state) {
    for (const auto& [name, p] : named) {
        auto it = state.find("sgd.v." + name);
        if (it == state.end()) continue;
        AUTOLC_CHECK(it->second.numel() == p.numel(), "sgd: checkpoint state size mismatch");
        velocity_[p.impl().get()] = it->second.to_vector();
    }
}

void Adam::step(const std::vector<Tensor>& params, double lr) {
    AUTOLC_CHECK(lr > 0.0, "adam: lr must be positive");
    AUTOLC_CHECK(beta1_ >= 0.0 && beta1_ < 1.0 && beta2_ >= 0.0 && beta2_ < 1.0,
                 "adam: betas must lie in [0, 1)");
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const Tensor& p : params) {
        auto& m = m_[p.impl().get()];
        auto& v = v_[p.impl().get()];
        if (m.empty()) {
            m.assign(static_cast<size_t>(p.numel()), 0.0);
            v.assign(static_cast<size_t>(p.numel()), 0.0);
        }
        std::vector<double> g = grad_as_doubles(p);
        for (i64 i = 0; i < p.numel(); ++i) {
            size_t k = static_cast<size_t>(i);
            double gi = g[k] + weight_decay_ * p.at(i);
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * gi;
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * gi * gi;
            double mhat = m[k] / bc1;
            double vhat = v[k] / bc2;
            p.set(i, p.at(i) - lr * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

std::map<std::string, Tensor> Adam::state(
    const std::vector<std::pair<std::string, Tensor>>& named) const {
    std::map<std::string, Tensor> out;
    out["adam.t"] = Tensor::from_vector({1}, {static_cast<double>(t_)}, Dtype::f64);
    for (const auto& [name, p] : named) {
        auto im = m_.find(p.impl().get());
        auto iv = v_.find(p.impl().get());
        if (im != m_.end()) out["adam.m." + name] = state_to_tensor(im->second);
        if (iv != v_.end()) out["adam.v." + name] = state_to_tensor(iv->second);
    }
    return out;
}

void Adam::load_state(const std::vector<std::pair<std::string, Tensor>>& named,
                      const std::map<std::string, Tensor>& state) {
    auto it = state.find("adam.t");
    if (it != state.end()) t_ = static_cast<i64>(it->second.at(0));
    for (const auto& [name, p] : named) {
        auto im = state.find("adam.m." + name);
        auto iv = state.find("adam.v." + name);
        if (im != state.end()) m_[p.impl().get()] = im->second.to_vector();
        if (iv != state.end()) v_[p.impl().get()] = iv->second.to_vector();
    }
}

double finite_diff_check(const std::function<Tensor()>& fn, const std::vector<Tensor>& params,
                         double eps) {
    AUTOLC_CHECK(eps > 0.0, "finite_diff_check: eps must be positive");
    for (const Tensor& p : params) p.zero_grad();

    Tensor loss = fn();
    AUTOLC_CHECK(loss.numel() == 1, "finite_diff_check: function must return a scalar");
    if (!std::isfinite(loss.item())) throw NumericError("finite_diff_check: non-finite output");
    if (loss.impl()->node) backward(loss);  // constant functions have no tape

    double worst = 0.0;
    for (const Tensor& p : params) {
        for (i64 i = 0; i < p.numel(); ++i) {
            double saved = p.at(i);
            p.set(i, saved + eps);
            double fp = fn().item();
            p.set(i, saved - eps);
            double fm = fn().item();
            p.set(i, saved);
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("finite_diff_check: non-finite output under perturbation");
            double cd = (fp - fm) / (2.0 * eps);
            double an = p.grad_at(i);
            double denom = std::max({std::abs(an), std::abs(cd), 1e-12});
            worst = std::max(worst, std::abs(an - cd) / denom);
        }
    }
    return worst;
}

}  // namespace autolc
