#pragma once

#include <map>
#include <string>

#include "autolc/tensor.hpp"

namespace autolc {

enum class LrKind { cosine, polynomial, constant };

struct LrSchedule {
    LrKind kind = LrKind::constant;
    double initial = 0.0;
    double final = 0.0;
    double power = 0.9;
    i64 warmup_steps = 0;
    i64 total_steps = 1;

    static LrSchedule cosine(double initial, double final, i64 total, i64 warmup = 0) {
        return {LrKind::cosine, initial, final, 0.9, warmup, total};
    }
    static LrSchedule polynomial(double initial, i64 total, i64 warmup = 0, double power = 0.9) {
        return {LrKind::polynomial, initial, 0.0, power, warmup, total};
    }
    static LrSchedule constant(double lr) { return {LrKind::constant, lr, lr, 0.9, 0, 1}; }
    void validate() const;
};

// Warmup ramps linearly from 0 to `initial`; afterwards cosine decays to
// `final` and polynomial decays as initial*(1-t)^power over the remaining steps.
double lr_at(const LrSchedule& s, i64 step);

// v <- momentum*v + (grad + wd*p); p <- p - lr*v. Velocity is keyed by the
// parameter's storage, so the same optimizer instance must be reused across steps.
class SgdMomentum {
public:
    SgdMomentum(double momentum, double weight_decay)
        : momentum_(momentum), weight_decay_(weight_decay) {}
    void step(const std::vector<Tensor>& params, double lr);
    // state access for checkpointing, keyed by caller-provided names
    std::map<std::string, Tensor> state(const std::vector<std::pair<std::string, Tensor>>& named) const;
    void load_state(const std::vector<std::pair<std::string, Tensor>>& named,
                    const std::map<std::string, Tensor>& state);

private:
    double momentum_, weight_decay_;
    std::map<TensorImpl*, std::vector<double>> velocity_;
};

// Classical Adam with coupled weight decay (decay added to the gradient).
class Adam {
public:
    Adam(double beta1, double beta2, double eps, double weight_decay)
        : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}
    void step(const std::vector<Tensor>& params, double lr);
    i64 t() const { return t_; }
    std::map<std::string, Tensor> state(const std::vector<std::pair<std::string, Tensor>>& named) const;
    void load_state(const std::vector<std::pair<std::string, Tensor>>& named,
                    const std::map<std::string, Tensor>& state);

private:
    double beta1_, beta2_, eps_, weight_decay_;
    i64 t_ = 0;
    std::map<TensorImpl*, std::vector<double>> m_, v_;
};

// Central-difference gradient check. `fn` must be a pure scalar function of
// the given leaf parameters. Returns the max over all parameter scalars of
// |analytic - cd| / max(|analytic|, |cd|, 1e-12).
double finite_diff_check(const std::function<Tensor()>& fn, const std::vector<Tensor>& params,
                         double eps);

}  // namespace autolc
