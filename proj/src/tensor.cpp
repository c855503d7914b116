#include "autolc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace autolc {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

// ---- Tensor basics ----

Tensor Tensor::zeros(const Shape& shape, Dtype dt, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->dtype = dt;
    impl->requires_grad = requires_grad;
    impl->alloc(numel_of(shape));
    return Tensor(impl);
}

Tensor Tensor::full(const Shape& shape, double value, Dtype dt) {
    Tensor t = zeros(shape, dt, false);
    i64 n = t.numel();
    if (dt == Dtype::f32) {
        float v = static_cast<float>(value);
        std::fill(t.impl()->f32.begin(), t.impl()->f32.end(), v);
    } else {
        std::fill(t.impl()->f64.begin(), t.impl()->f64.end(), value);
    }
    (void)n;
    return t;
}

Tensor Tensor::from_vector(const Shape& shape, const std::vector<double>& values, Dtype dt,
                           bool requires_grad) {
    AUTOLC_CHECK(static_cast<i64>(values.size()) == numel_of(shape),
                 "from_vector: value count does not match shape " + shape_str(shape));
    Tensor t = zeros(shape, dt, requires_grad);
    if (dt == Dtype::f32) {
        for (size_t i = 0; i < values.size(); ++i) t.impl()->f32[i] = static_cast<float>(values[i]);
    } else {
        t.impl()->f64 = values;
    }
    return t;
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double mean, double stddev, Dtype dt,
                     bool requires_grad) {
    Tensor t = zeros(shape, dt, requires_grad);
    i64 n = t.numel();
    if (dt == Dtype::f32) {
        float* p = t.data<float>();
        for (i64 i = 0; i < n; ++i) p[i] = static_cast<float>(mean + stddev * rng.normal());
    } else {
        double* p = t.data<double>();
        for (i64 i = 0; i < n; ++i) p[i] = mean + stddev * rng.normal();
    }
    return t;
}

template <>
float* Tensor::data<float>() {
    AUTOLC_CHECK(impl_->dtype == Dtype::f32, "dtype mismatch: tensor is f64");
    return impl_->f32.data();
}
template <>
double* Tensor::data<double>() {
    AUTOLC_CHECK(impl_->dtype == Dtype::f64, "dtype mismatch: tensor is f32");
    return impl_->f64.data();
}
template <>
const float* Tensor::data<float>() const {
    AUTOLC_CHECK(impl_->dtype == Dtype::f32, "dtype mismatch: tensor is f64");
    return impl_->f32.data();
}
template <>
const double* Tensor::data<double>() const {
    AUTOLC_CHECK(impl_->dtype == Dtype::f64, "dtype mismatch: tensor is f32");
    return impl_->f64.data();
}
template <>
float* Tensor::grad_data<float>() const {
    impl_->ensure_grad();
    return impl_->grad32.data();
}
template <>
double* Tensor::grad_data<double>() const {
    impl_->ensure_grad();
    return impl_->grad64.data();
}

double Tensor::at(i64 flat) const {
    return impl_->dtype == Dtype::f32 ? static_cast<double>(impl_->f32[static_cast<size_t>(flat)])
                                      : impl_->f64[static_cast<size_t>(flat)];
}

void Tensor::set(i64 flat, double v) const {
    if (impl_->dtype == Dtype::f32)
        impl_->f32[static_cast<size_t>(flat)] = static_cast<float>(v);
    else
        impl_->f64[static_cast<size_t>(flat)] = v;
}

double Tensor::grad_at(i64 flat) const {
    if (!impl_->grad_alloced()) return 0.0;
    return impl_->dtype == Dtype::f32
               ? static_cast<double>(impl_->grad32[static_cast<size_t>(flat)])
               : impl_->grad64[static_cast<size_t>(flat)];
}

Tensor Tensor::grad() const {
    Tensor g = Tensor::zeros(shape(), dtype(), false);
    if (impl_->grad_alloced()) {
        if (dtype() == Dtype::f32)
            g.impl()->f32 = impl_->grad32;
        else
            g.impl()->f64 = impl_->grad64;
    }
    return g;
}

void Tensor::zero_grad() const {
    impl_->grad32.clear();
    impl_->grad64.clear();
}

Tensor Tensor::detach() const {
    Tensor t = Tensor::zeros(shape(), dtype(), false);
    t.impl()->f32 = impl_->f32;
    t.impl()->f64 = impl_->f64;
    return t;
}

Tensor Tensor::to(Dtype dt) const {
    if (dt == dtype()) return detach();
    Tensor t = Tensor::zeros(shape(), dt, false);
    i64 n = numel();
    for (i64 i = 0; i < n; ++i) t.set(i, at(i));
    return t;
}

std::vector<double> Tensor::to_vector() const {
    std::vector<double> v(static_cast<size_t>(numel()));
    for (i64 i = 0; i < numel(); ++i) v[static_cast<size_t>(i)] = at(i);
    return v;
}

void Tensor::copy_from(const Tensor& src) const {
    AUTOLC_CHECK(src.shape() == shape(), "copy_from: shape mismatch");
    if (dtype() == src.dtype()) {
        impl_->f32 = src.impl()->f32;
        impl_->f64 = src.impl()->f64;
    } else {
        for (i64 i = 0; i < numel(); ++i) set(i, src.at(i));
    }
}

// ---- autodiff machinery ----

namespace detail {

bool any_on_tape(std::initializer_list<const Tensor*> ts) {
    if (!grad_enabled()) return false;
    for (const Tensor* t : ts)
        if (t->defined() && t->impl()->on_tape()) return true;
    return false;
}

bool any_on_tape(const std::vector<Tensor>& ts) {
    if (!grad_enabled()) return false;
    for (const Tensor& t : ts)
        if (t.defined() && t.impl()->on_tape()) return true;
    return false;
}

void attach_node(Tensor& out, const char* op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                 std::function<void(TensorImpl&)> backward) {
    auto node = std::make_shared<Node>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl()->node = std::move(node);
}

// Accumulate `src` (same dtype/layout as t) into t's grad buffer.
template <class T>
void axpy_grad(TensorImpl& t, const T* src, i64 n, double scale = 1.0) {
    t.ensure_grad();
    if constexpr (std::is_same_v<T, float>) {
        float* g = t.grad32.data();
        float s = static_cast<float>(scale);
        for (i64 i = 0; i < n; ++i) g[i] += s * src[i];
    } else {
        double* g = t.grad64.data();
        for (i64 i = 0; i < n; ++i) g[i] += scale * src[i];
    }
}

}  // namespace detail

using detail::attach_node;

void backward(const Tensor& loss) {
    AUTOLC_CHECK(loss.defined(), "backward: undefined tensor");
    if (loss.numel() != 1) throw ValueError("backward: loss must be a scalar tensor");
    if (!loss.impl()->node)
        throw ValueError("backward: loss is not part of a recorded computation");

    // Postorder DFS over producer nodes (iterative; graphs can be deep).
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<std::pair<TensorImpl*, size_t>> stack;
    stack.emplace_back(loss.impl().get(), 0);
    seen.insert(loss.impl().get());
    while (!stack.empty()) {
        auto& [impl, idx] = stack.back();
        if (!impl->node || idx >= impl->node->inputs.size()) {
            order.push_back(impl);
            stack.pop_back();
            continue;
        }
        TensorImpl* child = impl->node->inputs[idx++].get();
        if (child->node && seen.insert(child).second) stack.emplace_back(child, 0);
    }

    loss.impl()->ensure_grad();
    if (loss.dtype() == Dtype::f32)
        loss.impl()->grad32[0] = 1.0f;
    else
        loss.impl()->grad64[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* impl = *it;
        if (!impl->node) continue;
        if (!impl->grad_alloced()) continue;  // no gradient flowed here
        impl->node->backward(*impl);
    }
}

// ---- elementwise ops ----

namespace {

template <class T>
void add_kernel(const T* a, const T* b, T* o, i64 n) {
    for (i64 i = 0; i < n; ++i) o[i] = a[i] + b[i];
}

void check_same(const Tensor& a, const Tensor& b, const char* op) {
    AUTOLC_CHECK(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                             shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    AUTOLC_CHECK(a.dtype() == b.dtype(), std::string(op) + ": dtype mismatch");
}

template <class T>
const T* tdata(const TensorImpl& impl) {
    if constexpr (std::is_same_v<T, float>)
        return impl.f32.data();
    else
        return impl.f64.data();
}

template <class T>
T* tgrad(TensorImpl& impl) {
    impl.ensure_grad();
    if constexpr (std::is_same_v<T, float>)
        return impl.grad32.data();
    else
        return impl.grad64.data();
}

template <class T>
const T* tgrad_const(const TensorImpl& impl) {
    if constexpr (std::is_same_v<T, float>)
        return impl.grad32.data();
    else
        return impl.grad64.data();
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same(a, b, "add");
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    i64 n = a.numel();
    if (a.dtype() == Dtype::f32)
        add_kernel(a.data<float>(), b.data<float>(), out.data<float>(), n);
    else
        add_kernel(a.data<double>(), b.data<double>(), out.data<double>(), n);
    if (detail::any_on_tape({&a, &b})) {
        auto ai = a.impl(), bi = b.impl();
        attach_node(out, "add", {ai, bi}, [ai, bi, n](TensorImpl& self) {
            if (self.dtype == Dtype::f32) {
                if (ai->on_tape()) detail::axpy_grad(*ai, self.grad32.data(), n);
                if (bi->on_tape()) detail::axpy_grad(*bi, self.grad32.data(), n);
            } else {
                if (ai->on_tape()) detail::axpy_grad(*ai, self.grad64.data(), n);
                if (bi->on_tape()) detail::axpy_grad(*bi, self.grad64.data(), n);
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    i64 n = a.numel();
    auto run = [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        const T* pb = b.data<T>();
        T* po = out.data<T>();
        for (i64 i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    };
    if (a.dtype() == Dtype::f32)
        run(float{});
    else
        run(double{});
    if (detail::any_on_tape({&a, &b})) {
        auto ai = a.impl(), bi = b.impl();
        attach_node(out, "mul", {ai, bi}, [ai, bi, n](TensorImpl& self) {
            auto bw = [&](auto tag) {
                using T = decltype(tag);
                const T* go = tgrad_const<T>(self);
                if (ai->on_tape()) {
                    T* ga = tgrad<T>(*ai);
                    const T* pb = tdata<T>(*bi);
                    for (i64 i = 0; i < n; ++i) ga[i] += go[i] * pb[i];
                }
                if (bi->on_tape()) {
                    T* gb = tgrad<T>(*bi);
                    const T* pa = tdata<T>(*ai);
                    for (i64 i = 0; i < n; ++i) gb[i] += go[i] * pa[i];
                }
            };
            if (self.dtype == Dtype::f32)
                bw(float{});
            else
                bw(double{});
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    i64 n = a.numel();
    if (a.dtype() == Dtype::f32) {
        const float* pa = a.data<float>();
        float* po = out.data<float>();
        float fc = static_cast<float>(c);
        for (i64 i = 0; i < n; ++i) po[i] = pa[i] * fc;
    } else {
        const double* pa = a.data<double>();
        double* po = out.data<double>();
        for (i64 i = 0; i < n; ++i) po[i] = pa[i] * c;
    }
    if (detail::any_on_tape({&a})) {
        auto ai = a.impl();
        attach_node(out, "scale", {ai}, [ai, c, n](TensorImpl& self) {
            if (self.dtype == Dtype::f32)
                detail::axpy_grad(*ai, self.grad32.data(), n, c);
            else
                detail::axpy_grad(*ai, self.grad64.data(), n, c);
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    i64 n = a.numel();
    for (i64 i = 0; i < n; ++i) out.set(i, a.at(i) + c);
    if (detail::any_on_tape({&a})) {
        auto ai = a.impl();
        attach_node(out, "add_scalar", {ai}, [ai, n](TensorImpl& self) {
            if (self.dtype == Dtype::f32)
                detail::axpy_grad(*ai, self.grad32.data(), n);
            else
                detail::axpy_grad(*ai, self.grad64.data(), n);
        });
    }
    return out;
}

Tensor sum_tensors(const std::vector<Tensor>& xs) {
    AUTOLC_CHECK(!xs.empty(), "sum_tensors: empty input");
    Tensor acc = xs[0];
    for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return acc;
}

Tensor weighted_sum(const std::vector<Tensor>& xs, const std::vector<Tensor>& coeffs) {
    AUTOLC_CHECK(!xs.empty() && xs.size() == coeffs.size(),
                 "weighted_sum: inputs and coefficients must pair up");
    const Shape& shape = xs[0].shape();
    Dtype dt = xs[0].dtype();
    for (const auto& x : xs) check_same(x, xs[0], "weighted_sum");
    for (const auto& c : coeffs)
        AUTOLC_CHECK(c.numel() == 1 && c.dtype() == dt, "weighted_sum: coeff must be scalar");
    Tensor out = Tensor::zeros(shape, dt);
    i64 n = out.numel();
    auto run = [&](auto tag) {
        using T = decltype(tag);
        T* po = out.data<T>();
        for (size_t k = 0; k < xs.size(); ++k) {
            const T* px = xs[k].data<T>();
            T c = static_cast<T>(coeffs[k].at(0));
            for (i64 i = 0; i < n; ++i) po[i] += c * px[i];
        }
    };
    if (dt == Dtype::f32)
        run(float{});
    else
        run(double{});

    bool tape = detail::any_on_tape(xs) || detail::any_on_tape(coeffs);
    if (tape) {
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        for (const auto& x : xs) inputs.push_back(x.impl());
        for (const auto& c : coeffs) inputs.push_back(c.impl());
        size_t nx = xs.size();
        attach_node(out, "weighted_sum", inputs, [nx, n](TensorImpl& self) {
            auto bw = [&](auto tag) {
                using T = decltype(tag);
                const T* go = tgrad_const<T>(self);
                for (size_t k = 0; k < nx; ++k) {
                    TensorImpl& xi = *self.node->inputs[k];
                    TensorImpl& ci = *self.node->inputs[nx + k];
                    T c = tdata<T>(ci)[0];
                    if (xi.on_tape()) {
                        T* gx = tgrad<T>(xi);
                        for (i64 i = 0; i < n; ++i) gx[i] += c * go[i];
                    }
                    if (ci.on_tape()) {
                        const T* px = tdata<T>(xi);
                        double acc = 0.0;
                        for (i64 i = 0; i < n; ++i) acc += static_cast<double>(go[i]) * px[i];
                        tgrad<T>(ci)[0] += static_cast<T>(acc);
                    }
                }
            };
            if (self.dtype == Dtype::f32)
                bw(float{});
            else
                bw(double{});
        });
    }
    return out;
}

Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s) {
    return weighted_sum({a}, {s});
}

Tensor scalar_at(const Tensor& t, i64 flat_index) {
    AUTOLC_CHECK(flat_index >= 0 && flat_index < t.numel(), "scalar_at: index out of range");
    Tensor out = Tensor::zeros({1}, t.dtype());
    out.set(0, t.at(flat_index));
    if (detail::any_on_tape({&t})) {
        auto ti = t.impl();
        attach_node(out, "scalar_at", {ti}, [ti, flat_index](TensorImpl& self) {
            if (self.dtype == Dtype::f32) {
                ti->ensure_grad();
                ti->grad32[static_cast<size_t>(flat_index)] += self.grad32[0];
            } else {
                ti->ensure_grad();
                ti->grad64[static_cast<size_t>(flat_index)] += self.grad64[0];
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& t) {
    Tensor out = Tensor::zeros({1}, t.dtype());
    i64 n = t.numel();
    double acc = 0.0;
    if (t.dtype() == Dtype::f32) {
        const float* p = t.data<float>();
        for (i64 i = 0; i < n; ++i) acc += p[i];
    } else {
        const double* p = t.data<double>();
        for (i64 i = 0; i < n; ++i) acc += p[i];
    }
    out.set(0, acc);
    if (detail::any_on_tape({&t})) {
        auto ti = t.impl();
        attach_node(out, "sum", {ti}, [ti, n](TensorImpl& self) {
            if (self.dtype == Dtype::f32) {
                float g = self.grad32[0];
                float* gt = tgrad<float>(*ti);
                for (i64 i = 0; i < n; ++i) gt[i] += g;
            } else {
                double g = self.grad64[0];
                double* gt = tgrad<double>(*ti);
                for (i64 i = 0; i < n; ++i) gt[i] += g;
            }
        });
    }
    return out;
}

Tensor mean(const Tensor& t) { return scale(sum(t), 1.0 / static_cast<double>(t.numel())); }

Tensor relu(const Tensor& t) {
    Tensor out = Tensor::zeros(t.shape(), t.dtype());
    i64 n = t.numel();
    auto run = [&](auto tag) {
        using T = decltype(tag);
        const T* p = t.data<T>();
        T* o = out.data<T>();
        for (i64 i = 0; i < n; ++i) o[i] = p[i] > T(0) ? p[i] : T(0);
    };
    if (t.dtype() == Dtype::f32)
        run(float{});
    else
        run(double{});
    if (detail::any_on_tape({&t})) {
        auto ti = t.impl();
        attach_node(out, "relu", {ti}, [ti, n](TensorImpl& self) {
            auto bw = [&](auto tag) {
                using T = decltype(tag);
                const T* go = tgrad_const<T>(self);
                const T* px = tdata<T>(*ti);
                T* gt = tgrad<T>(*ti);
                for (i64 i = 0; i < n; ++i)
                    if (px[i] > T(0)) gt[i] += go[i];
            };
            if (self.dtype == Dtype::f32)
                bw(float{});
            else
                bw(double{});
        });
    }
    return out;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
    AUTOLC_CHECK(!xs.empty(), "concat_channels: empty input");
    const Shape& s0 = xs[0].shape();
    AUTOLC_CHECK(s0.size() == 4, "concat_channels: expects NCHW tensors");
    i64 n = s0[0], h = s0[2], w = s0[3];
    i64 ctotal = 0;
    for (const auto& x : xs) {
        AUTOLC_CHECK(x.shape().size() == 4 && x.shape()[0] == n && x.shape()[2] == h &&
                         x.shape()[3] == w && x.dtype() == xs[0].dtype(),
                     "concat_channels: incompatible input " + shape_str(x.shape()));
        ctotal += x.shape()[1];
    }
    Tensor out = Tensor::zeros({n, ctotal, h, w}, xs[0].dtype());
    i64 hw = h * w;
    auto run = [&](auto tag) {
        using T = decltype(tag);
        T* po = out.data<T>();
        for (i64 b = 0; b < n; ++b) {
            i64 coff = 0;
            for (const auto& x : xs) {
                i64 c = x.shape()[1];
                const T* px = x.data<T>() + b * c * hw;
                std::copy(px, px + c * hw, po + (b * ctotal + coff) * hw);
                coff += c;
            }
        }
    };
    if (out.dtype() == Dtype::f32)
        run(float{});
    else
        run(double{});
    if (detail::any_on_tape(xs)) {
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        for (const auto& x : xs) inputs.push_back(x.impl());
        attach_node(out, "concat_channels", inputs, [n, hw, ctotal](TensorImpl& self) {
            auto bw = [&](auto tag) {
                using T = decltype(tag);
                const T* go = tgrad_const<T>(self);
                for (i64 b = 0; b < n; ++b) {
                    i64 coff = 0;
                    for (auto& xi : self.node->inputs) {
                        i64 c = xi->shape[1];
                        if (xi->on_tape()) {
                            T* gx = tgrad<T>(*xi) + b * c * hw;
                            const T* src = go + (b * ctotal + coff) * hw;
                            for (i64 i = 0; i < c * hw; ++i) gx[i] += src[i];
                        }
                        coff += c;
                    }
                }
            };
            if (self.dtype == Dtype::f32)
                bw(float{});
            else
                bw(double{});
        });
    }
    return out;
}

Tensor softmax_lastdim(const Tensor& x, const std::vector<std::uint8_t>* mask) {
    const Shape& s = x.shape();
    AUTOLC_CHECK(s.size() >= 1, "softmax_lastdim: rank must be >= 1");
    i64 cols = s.back();
    i64 rows = x.numel() / cols;
    if (mask)
        AUTOLC_CHECK(static_cast<i64>(mask->size()) == x.numel(),
                     "softmax_lastdim: mask size mismatch");
    for (i64 i = 0; i < x.numel(); ++i)
        if (!std::isfinite(x.at(i))) throw NumericError("softmax_lastdim: non-finite logit");

    Tensor out = Tensor::zeros(s, x.dtype());
    auto run = [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>();
        T* po = out.data<T>();
        for (i64 r = 0; r < rows; ++r) {
            const T* row = px + r * cols;
            T* orow = po + r * cols;
            const std::uint8_t* m = mask ? mask->data() + r * cols : nullptr;
            double mx = -1e300;
            bool any = false;
            for (i64 c = 0; c < cols; ++c) {
                if (m && !m[c]) continue;
                any = true;
                mx = std::max(mx, static_cast<double>(row[c]));
            }
            if (!any) continue;  // fully masked row -> zeros
            double denom = 0.0;
            for (i64 c = 0; c < cols; ++c) {
                if (m && !m[c]) continue;
                denom += std::exp(static_cast<double>(row[c]) - mx);
            }
            for (i64 c = 0; c < cols; ++c) {
                if (m && !m[c]) continue;
                orow[c] = static_cast<T>(std::exp(static_cast<double>(row[c]) - mx) / denom);
            }
        }
    };
    if (x.dtype() == Dtype::f32)
        run(float{});
    else
        run(double{});

    if (detail::any_on_tape({&x})) {
        auto xi = x.impl();
        std::vector<std::uint8_t> mask_copy;
        if (mask) mask_copy = *mask;
        // self holds the probabilities; reading them from self avoids keeping
        // a self-referencing shared_ptr inside the node.
        attach_node(out, "softmax_lastdim", {xi},
                    [xi, rows, cols, mask_copy](TensorImpl& self) {
                        auto bw = [&](auto tag) {
                            using T = decltype(tag);
                            const T* go = tgrad_const<T>(self);
                            const T* p = tdata<T>(self);
                            T* gx = tgrad<T>(*xi);
                            const std::uint8_t* mbase =
                                mask_copy.empty() ? nullptr : mask_copy.data();
                            for (i64 r = 0; r < rows; ++r) {
                                const T* prow = p + r * cols;
                                const T* grow = go + r * cols;
                                T* gxrow = gx + r * cols;
                                const std::uint8_t* m = mbase ? mbase + r * cols : nullptr;
                                double dot = 0.0;
                                for (i64 c = 0; c < cols; ++c) {
                                    if (m && !m[c]) continue;
                                    dot += static_cast<double>(grow[c]) * prow[c];
                                }
                                for (i64 c = 0; c < cols; ++c) {
                                    if (m && !m[c]) continue;
                                    gxrow[c] += static_cast<T>(prow[c] * (static_cast<double>(grow[c]) - dot));
                                }
                            }
                        };
                        if (self.dtype == Dtype::f32)
                            bw(float{});
                        else
                            bw(double{});
                    });
    }
    return out;
}

}  // namespace autolc
