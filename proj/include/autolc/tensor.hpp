#pragma once

#include <memory>

#include "autolc/common.hpp"

namespace autolc {

enum class Dtype { f32, f64 };

inline size_t dtype_size(Dtype dt) { return dt == Dtype::f32 ? 4 : 8; }
inline const char* dtype_name(Dtype dt) { return dt == Dtype::f32 ? "f32" : "f64"; }

struct TensorImpl;

// Node in the reverse-mode tape. A node never references its output, so the
// graph is a clean DAG of shared_ptrs from outputs toward leaves.
struct Node {
    const char* op = "";
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    // Reads the owning tensor's grad and accumulates into the inputs' grads.
    std::function<void(TensorImpl&)> backward;
};

struct TensorImpl {
    Shape shape;
    Dtype dtype = Dtype::f32;
    std::vector<float> f32;
    std::vector<double> f64;
    bool requires_grad = false;
    std::vector<float> grad32;
    std::vector<double> grad64;
    std::shared_ptr<Node> node;

    i64 numel() const { return numel_of(shape); }
    bool on_tape() const { return requires_grad || node != nullptr; }
    void alloc(i64 n) {
        if (dtype == Dtype::f32)
            f32.assign(static_cast<size_t>(n), 0.0f);
        else
            f64.assign(static_cast<size_t>(n), 0.0);
    }
    bool grad_alloced() const { return dtype == Dtype::f32 ? !grad32.empty() : !grad64.empty(); }
    void ensure_grad() {
        if (!grad_alloced()) {
            if (dtype == Dtype::f32)
                grad32.assign(f32.size(), 0.0f);
            else
                grad64.assign(f64.size(), 0.0);
        }
    }
};

template <class T>
struct DtypeTag;
template <>
struct DtypeTag<float> {
    static constexpr Dtype value = Dtype::f32;
};
template <>
struct DtypeTag<double> {
    static constexpr Dtype value = Dtype::f64;
};

// Dense NCHW-style tensor handle with optional tape participation. Copying a
// Tensor copies the handle, not the buffer.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(const Shape& shape, Dtype dt = Dtype::f32, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, Dtype dt = Dtype::f32);
    static Tensor from_vector(const Shape& shape, const std::vector<double>& values,
                              Dtype dt = Dtype::f32, bool requires_grad = false);
    static Tensor randn(const Shape& shape, Rng& rng, double mean, double stddev,
                        Dtype dt = Dtype::f32, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    i64 numel() const { return impl_->numel(); }
    Dtype dtype() const { return impl_->dtype; }
    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) const { impl_->requires_grad = rg; }

    template <class T>
    T* data();
    template <class T>
    const T* data() const;
    template <class T>
    T* grad_data() const;

    double at(i64 flat) const;
    void set(i64 flat, double v) const;
    double item() const {
        AUTOLC_CHECK(numel() == 1, "item() requires a scalar tensor");
        return at(0);
    }

    bool has_grad() const { return impl_->grad_alloced(); }
    double grad_at(i64 flat) const;
    Tensor grad() const;  // dense copy, zeros when no grad was accumulated
    void zero_grad() const;

    Tensor detach() const;                 // deep copy off the tape
    Tensor clone() const { return detach(); }
    Tensor to(Dtype dt) const;             // converted leaf copy
    std::vector<double> to_vector() const;
    void copy_from(const Tensor& src) const;  // in-place value copy, shapes must match

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Tape recording switch (thread-local). Forward passes under NoGradGuard
// build no graph.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

// Runs reverse-mode accumulation from a scalar loss. Every reachable leaf
// with requires_grad receives (accumulates) its gradient.
void backward(const Tensor& loss);

// Plain integer carrier for labels / argmax results. Not differentiable.
struct IntTensor {
    Shape shape;
    std::vector<std::int32_t> data;

    IntTensor() = default;
    IntTensor(Shape s, std::int32_t fill = 0)
        : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), fill) {}
    i64 numel() const { return numel_of(shape); }
};

// ---- elementwise / reduction autodiff ops ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor sum_tensors(const std::vector<Tensor>& xs);
// out = sum_i coeffs[i] * xs[i]; every coeff is a scalar tensor on the tape.
Tensor weighted_sum(const std::vector<Tensor>& xs, const std::vector<Tensor>& coeffs);
Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s);
Tensor scalar_at(const Tensor& t, i64 flat_index);
Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);
Tensor relu(const Tensor& t);
Tensor concat_channels(const std::vector<Tensor>& xs);  // NCHW along C

// Softmax over the last axis of a 2-D view (rows, cols). `mask`, when given,
// has one byte per element; masked entries produce exactly 0 and take no part
// in the normalization. Rows whose mask is all zero yield all-zero output.
Tensor softmax_lastdim(const Tensor& x, const std::vector<std::uint8_t>* mask = nullptr);

}  // namespace autolc
