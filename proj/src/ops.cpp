#include "autolc/ops.hpp"

#include <algorithm>
#include <cmath>

namespace autolc {

namespace {

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

bool tape_on(std::initializer_list<const Tensor*> ts) {
    if (!grad_enabled()) return false;
    for (const Tensor* t : ts)
        if (t->defined() && t->impl()->on_tape()) return true;
    return false;
}

void attach(Tensor& out, const char* op, std::vector<std::shared_ptr<TensorImpl>> inputs,
            std::function<void(TensorImpl&)> backward) {
    auto node = std::make_shared<Node>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl()->node = std::move(node);
}

struct ConvDims {
    i64 n, cin, ih, iw, cout, k, oh, ow;
    int stride, dilation, groups, pad;
    i64 cpg_in, cpg_out;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int dilation, int groups) {
    AUTOLC_CHECK(x.shape().size() == 4, "conv2d: input must be 4-D, got " + shape_str(x.shape()));
    AUTOLC_CHECK(w.shape().size() == 4, "conv2d: weight must be 4-D");
    AUTOLC_CHECK(stride >= 1 && dilation >= 1 && groups >= 1, "conv2d: bad stride/dilation/groups");
    ConvDims d;
    d.n = x.shape()[0];
    d.cin = x.shape()[1];
    d.ih = x.shape()[2];
    d.iw = x.shape()[3];
    d.cout = w.shape()[0];
    d.k = w.shape()[2];
    AUTOLC_CHECK(w.shape()[2] == w.shape()[3], "conv2d: only square kernels");
    AUTOLC_CHECK(d.cin % groups == 0 && d.cout % groups == 0,
                 "conv2d: channels not divisible by groups");
    AUTOLC_CHECK(w.shape()[1] == d.cin / groups, "conv2d: weight in-channel mismatch");
    d.stride = stride;
    d.dilation = dilation;
    d.groups = groups;
    d.pad = static_cast<int>((d.k - 1) * dilation / 2);
    i64 span = (d.k - 1) * dilation + 1;
    d.oh = (d.ih + 2 * d.pad - span) / stride + 1;
    d.ow = (d.iw + 2 * d.pad - span) / stride + 1;
    AUTOLC_CHECK(d.oh >= 1 && d.ow >= 1, "conv2d: empty output for input " + shape_str(x.shape()));
    d.cpg_in = d.cin / groups;
    d.cpg_out = d.cout / groups;
    return d;
}

// Column range such that 0 <= ow*stride + off < iw.
inline void ow_range(i64 off, i64 iw, int stride, i64 ow_total, i64& lo, i64& hi) {
    lo = off < 0 ? (-off + stride - 1) / stride : 0;
    i64 lim = iw - off;
    hi = lim <= 0 ? 0 : std::min<i64>(ow_total, (lim + stride - 1) / stride);
    if (hi < lo) hi = lo;
}

template <class T>
void conv_forward_kernel(const ConvDims& d, const T* x, const T* w, const T* bias, T* y) {
    parallel_for(d.n * d.cout, [&](i64 b, i64 e) {
        std::vector<T> acc(static_cast<size_t>(d.ow));
        for (i64 job = b; job < e; ++job) {
            i64 n = job / d.cout;
            i64 co = job % d.cout;
            i64 g = co / d.cpg_out;
            T* yplane = y + (n * d.cout + co) * d.oh * d.ow;
            for (i64 oh = 0; oh < d.oh; ++oh) {
                std::fill(acc.begin(), acc.end(), bias ? bias[co] : T(0));
                for (i64 cil = 0; cil < d.cpg_in; ++cil) {
                    i64 ci = g * d.cpg_in + cil;
                    const T* xplane = x + (n * d.cin + ci) * d.ih * d.iw;
                    for (i64 kh = 0; kh < d.k; ++kh) {
                        i64 ih = oh * d.stride + kh * d.dilation - d.pad;
                        if (ih < 0 || ih >= d.ih) continue;
                        const T* xrow = xplane + ih * d.iw;
                        const T* wrow = w + ((co * d.cpg_in + cil) * d.k + kh) * d.k;
                        for (i64 kw = 0; kw < d.k; ++kw) {
                            T wv = wrow[kw];
                            i64 off = kw * d.dilation - d.pad;
                            i64 lo, hi;
                            ow_range(off, d.iw, d.stride, d.ow, lo, hi);
                            if (d.stride == 1) {
                                const T* xr = xrow + off;
                                for (i64 ow = lo; ow < hi; ++ow) acc[ow] += wv * xr[ow];
                            } else {
                                for (i64 ow = lo; ow < hi; ++ow)
                                    acc[ow] += wv * xrow[ow * d.stride + off];
                            }
                        }
                    }
                }
                std::copy(acc.begin(), acc.end(), yplane + oh * d.ow);
            }
        }
    });
}

template <class T>
void conv_backward_input_kernel(const ConvDims& d, const T* gy, const T* w, T* gx) {
    parallel_for(d.n * d.cin, [&](i64 b, i64 e) {
        for (i64 job = b; job < e; ++job) {
            i64 n = job / d.cin;
            i64 ci = job % d.cin;
            i64 g = ci / d.cpg_in;
            i64 cil = ci % d.cpg_in;
            T* gxplane = gx + (n * d.cin + ci) * d.ih * d.iw;
            for (i64 col = 0; col < d.cpg_out; ++col) {
                i64 co = g * d.cpg_out + col;
                const T* gyplane = gy + (n * d.cout + co) * d.oh * d.ow;
                for (i64 kh = 0; kh < d.k; ++kh) {
                    for (i64 oh = 0; oh < d.oh; ++oh) {
                        i64 ih = oh * d.stride + kh * d.dilation - d.pad;
                        if (ih < 0 || ih >= d.ih) continue;
                        T* gxrow = gxplane + ih * d.iw;
                        const T* gyrow = gyplane + oh * d.ow;
                        const T* wrow = w + ((co * d.cpg_in + cil) * d.k + kh) * d.k;
                        for (i64 kw = 0; kw < d.k; ++kw) {
                            T wv = wrow[kw];
                            i64 off = kw * d.dilation - d.pad;
                            i64 lo, hi;
                            ow_range(off, d.iw, d.stride, d.ow, lo, hi);
                            if (d.stride == 1) {
                                T* gxr = gxrow + off;
                                for (i64 ow = lo; ow < hi; ++ow) gxr[ow] += wv * gyrow[ow];
                            } else {
                                for (i64 ow = lo; ow < hi; ++ow)
                                    gxrow[ow * d.stride + off] += wv * gyrow[ow];
                            }
                        }
                    }
                }
            }
        }
    });
}

template <class T>
void conv_backward_weight_kernel(const ConvDims& d, const T* gy, const T* x, T* gw, T* gb) {
    parallel_for(d.cout, [&](i64 b, i64 e) {
        for (i64 co = b; co < e; ++co) {
            i64 g = co / d.cpg_out;
            if (gb) {
                double acc = 0.0;
                for (i64 n = 0; n < d.n; ++n) {
                    const T* gyplane = gy + (n * d.cout + co) * d.oh * d.ow;
                    for (i64 i = 0; i < d.oh * d.ow; ++i) acc += static_cast<double>(gyplane[i]);
                }
                gb[co] += static_cast<T>(acc);
            }
            if (!gw) continue;
            for (i64 cil = 0; cil < d.cpg_in; ++cil) {
                i64 ci = g * d.cpg_in + cil;
                for (i64 kh = 0; kh < d.k; ++kh) {
                    for (i64 kw = 0; kw < d.k; ++kw) {
                        i64 off = kw * d.dilation - d.pad;
                        i64 lo, hi;
                        ow_range(off, d.iw, d.stride, d.ow, lo, hi);
                        double acc = 0.0;
                        for (i64 n = 0; n < d.n; ++n) {
                            const T* gyplane = gy + (n * d.cout + co) * d.oh * d.ow;
                            const T* xplane = x + (n * d.cin + ci) * d.ih * d.iw;
                            for (i64 oh = 0; oh < d.oh; ++oh) {
                                i64 ih = oh * d.stride + kh * d.dilation - d.pad;
                                if (ih < 0 || ih >= d.ih) continue;
                                const T* gyrow = gyplane + oh * d.ow;
                                const T* xrow = xplane + ih * d.iw;
                                if (d.stride == 1) {
                                    const T* xr = xrow + off;
                                    for (i64 ow = lo; ow < hi; ++ow)
                                        acc += static_cast<double>(gyrow[ow]) * xr[ow];
                                } else {
                                    for (i64 ow = lo; ow < hi; ++ow)
                                        acc += static_cast<double>(gyrow[ow]) *
                                               xrow[ow * d.stride + off];
                                }
                            }
                        }
                        gw[((co * d.cpg_in + cil) * d.k + kh) * d.k + kw] += static_cast<T>(acc);
                    }
                }
            }
        }
    });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int dilation,
              int groups) {
    ConvDims d = conv_dims(x, w, stride, dilation, groups);
    if (bias.defined()) {
        AUTOLC_CHECK(bias.numel() == d.cout, "conv2d: bias size mismatch");
        AUTOLC_CHECK(bias.dtype() == x.dtype(), "conv2d: bias dtype mismatch");
    }
    AUTOLC_CHECK(w.dtype() == x.dtype(), "conv2d: weight dtype mismatch");
    Tensor out = Tensor::zeros({d.n, d.cout, d.oh, d.ow}, x.dtype());
    if (x.dtype() == Dtype::f32)
        conv_forward_kernel<float>(d, x.data<float>(), w.data<float>(),
                                   bias.defined() ? bias.data<float>() : nullptr,
                                   out.data<float>());
    else
        conv_forward_kernel<double>(d, x.data<double>(), w.data<double>(),
                                    bias.defined() ? bias.data<double>() : nullptr,
                                    out.data<double>());

    if (tape_on({&x, &w, &bias})) {
        auto xi = x.impl(), wi = w.impl();
        auto bi = bias.defined() ? bias.impl() : nullptr;
        std::vector<std::shared_ptr<TensorImpl>> inputs{xi, wi};
        if (bi) inputs.push_back(bi);
        attach(out, "conv2d", std::move(inputs), [xi, wi, bi, d](TensorImpl& self) {
            auto bw = [&](auto tag) {
                using T = decltype(tag);
                const T* gy = tgrad_const<T>(self);
                if (xi->on_tape())
                    conv_backward_input_kernel<T>(d, gy, tdata<T>(*wi), tgrad<T>(*xi));
                if (wi->on_tape() || (bi && bi->on_tape()))
                    conv_backward_weight_kernel<T>(d, gy, tdata<T>(*xi),
                                                   wi->on_tape() ? tgrad<T>(*wi) : nullptr,
                                                   bi && bi->on_tape() ? tgrad<T>(*bi) : nullptr);
            };
            if (self.dtype == Dtype::f32)
                bw(float{});
            else
                bw(double{});
        });
    }
    return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& shift,
                  Tensor& running_mean, Tensor& running_var, bool training, double momentum,
                  double eps) {
    AUTOLC_CHECK(x.shape().size() == 4, "batch_norm: input must be 4-D");
    i64 n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    AUTOLC_CHECK(gamma.numel() == c && shift.numel() == c, "batch_norm: affine size mismatch");
    AUTOLC_CHECK(running_mean.numel() == c && running_var.numel() == c,
                 "batch_norm: running stats size mismatch");
    i64 m = n * h * w;
    i64 hw = h * w;

    std::vector<double> mean_v(static_cast<size_t>(c)), invstd_v(static_cast<size_t>(c));
    Tensor out = Tensor::zeros(x.shape(), x.dtype());

    auto run = [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>();
        T* po = out.data<T>();
        const T* pg = gamma.data<T>();
        const T* pb = shift.data<T>();
        if (training) {
            parallel_for(c, [&](i64 cb, i64 ce) {
                for (i64 ch = cb; ch < ce; ++ch) {
                    double s = 0.0, s2 = 0.0;
                    for (i64 b = 0; b < n; ++b) {
                        const T* plane = px + (b * c + ch) * hw;
                        for (i64 i = 0; i < hw; ++i) {
                            double v = plane[i];
                            s += v;
                            s2 += v * v;
                        }
                    }
                    double mu = s / m;
                    double var = s2 / m - mu * mu;
                    if (var < 0) var = 0;
                    mean_v[ch] = mu;
                    invstd_v[ch] = 1.0 / std::sqrt(var + eps);
                }
            });
            // running stats use the unbiased variance estimate
            for (i64 ch = 0; ch < c; ++ch) {
                double var_b = 1.0 / (invstd_v[ch] * invstd_v[ch]) - eps;
                double var_u = m > 1 ? var_b * m / (m - 1) : var_b;
                running_mean.set(ch, (1.0 - momentum) * running_mean.at(ch) + momentum * mean_v[ch]);
                running_var.set(ch, (1.0 - momentum) * running_var.at(ch) + momentum * var_u);
            }
        } else {
            for (i64 ch = 0; ch < c; ++ch) {
                mean_v[ch] = running_mean.at(ch);
                invstd_v[ch] = 1.0 / std::sqrt(running_var.at(ch) + eps);
            }
        }
        parallel_for(n * c, [&](i64 jb, i64 je) {
            for (i64 job = jb; job < je; ++job) {
                i64 ch = job % c;
                T g = pg[ch], b0 = pb[ch];
                T mu = static_cast<T>(mean_v[ch]);
                T is = static_cast<T>(invstd_v[ch]);
                const T* plane = px + job * hw;
                T* oplane = po + job * hw;
                for (i64 i = 0; i < hw; ++i) oplane[i] = g * (plane[i] - mu) * is + b0;
            }
        });
    };
    if (x.dtype() == Dtype::f32)
        run(float{});
    else
        run(double{});

    if (tape_on({&x, &gamma, &shift})) {
        auto xi = x.impl(), gi = gamma.impl(), bi = shift.impl();
        bool train_mode = training;
        attach(out, "batch_norm", {xi, gi, bi},
               [xi, gi, bi, mean_v, invstd_v, n, c, hw, m, train_mode](TensorImpl& self) {
                   auto bw = [&](auto tag) {
                       using T = decltype(tag);
                       const T* gy = tgrad_const<T>(self);
                       const T* px = tdata<T>(*xi);
                       const T* pg = tdata<T>(*gi);
                       bool need_x = xi->on_tape();
                       T* gx = need_x ? tgrad<T>(*xi) : nullptr;
                       T* gg = gi->on_tape() ? tgrad<T>(*gi) : nullptr;
                       T* gb = bi->on_tape() ? tgrad<T>(*bi) : nullptr;
                       parallel_for(c, [&](i64 cb, i64 ce) {
                           for (i64 ch = cb; ch < ce; ++ch) {
                               double mu = mean_v[ch], is = invstd_v[ch];
                               double sum_gy = 0.0, sum_gy_xhat = 0.0;
                               for (i64 b = 0; b < n; ++b) {
                                   const T* gyp = gy + (b * c + ch) * hw;
                                   const T* xp = px + (b * c + ch) * hw;
                                   for (i64 i = 0; i < hw; ++i) {
                                       double xhat = (xp[i] - mu) * is;
                                       sum_gy += gyp[i];
                                       sum_gy_xhat += gyp[i] * xhat;
                                   }
                               }
                               if (gg) gg[ch] += static_cast<T>(sum_gy_xhat);
                               if (gb) gb[ch] += static_cast<T>(sum_gy);
                               if (!need_x) continue;
                               double g = pg[ch];
                               if (train_mode) {
                                   double k1 = sum_gy / m, k2 = sum_gy_xhat / m;
                                   for (i64 b = 0; b < n; ++b) {
                                       const T* gyp = gy + (b * c + ch) * hw;
                                       const T* xp = px + (b * c + ch) * hw;
                                       T* gxp = gx + (b * c + ch) * hw;
                                       for (i64 i = 0; i < hw; ++i) {
                                           double xhat = (xp[i] - mu) * is;
                                           gxp[i] += static_cast<T>(g * is *
                                                                    (gyp[i] - k1 - xhat * k2));
                                       }
                                   }
                               } else {
                                   for (i64 b = 0; b < n; ++b) {
                                       const T* gyp = gy + (b * c + ch) * hw;
                                       T* gxp = gx + (b * c + ch) * hw;
                                       for (i64 i = 0; i < hw; ++i)
                                           gxp[i] += static_cast<T>(g * is * gyp[i]);
                                   }
                               }
                           }
                       });
                   };
                   if (self.dtype == Dtype::f32)
                       bw(float{});
                   else
                       bw(double{});
               });
    }
    return out;
}

namespace {

template <class T, bool kMax>
void pool3_forward(const T* x, T* y, std::int32_t* argmax, i64 nplanes, i64 h, i64 w) {
    parallel_for(nplanes, [&](i64 b, i64 e) {
        for (i64 p = b; p < e; ++p) {
            const T* xp = x + p * h * w;
            T* yp = y + p * h * w;
            std::int32_t* ap = argmax ? argmax + p * h * w : nullptr;
            for (i64 oh = 0; oh < h; ++oh) {
                for (i64 ow = 0; ow < w; ++ow) {
                    if constexpr (kMax) {
                        T best{};
                        std::int32_t bidx = -1;
                        for (i64 kh = -1; kh <= 1; ++kh) {
                            i64 ih = oh + kh;
                            if (ih < 0 || ih >= h) continue;
                            for (i64 kw = -1; kw <= 1; ++kw) {
                                i64 iw = ow + kw;
                                if (iw < 0 || iw >= w) continue;
                                T v = xp[ih * w + iw];
                                if (bidx < 0 || v > best) {
                                    best = v;
                                    bidx = static_cast<std::int32_t>(ih * w + iw);
                                }
                            }
                        }
                        yp[oh * w + ow] = best;
                        if (ap) ap[oh * w + ow] = bidx;
                    } else {
                        double acc = 0.0;
                        int cnt = 0;
                        for (i64 kh = -1; kh <= 1; ++kh) {
                            i64 ih = oh + kh;
                            if (ih < 0 || ih >= h) continue;
                            for (i64 kw = -1; kw <= 1; ++kw) {
                                i64 iw = ow + kw;
                                if (iw < 0 || iw >= w) continue;
                                acc += xp[ih * w + iw];
                                ++cnt;
                            }
                        }
                        yp[oh * w + ow] = static_cast<T>(acc / cnt);
                    }
                }
            }
        }
    });
}

}  // namespace

Tensor avg_pool3(const Tensor& x) {
    AUTOLC_CHECK(x.shape().size() == 4, "avg_pool3: input must be 4-D");
    i64 n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    if (x.dtype() == Dtype::f32)
        pool3_forward<float, false>(x.data<float>(), out.data<float>(), nullptr, n * c, h, w);
    else
        pool3_forward<double, false>(x.data<double>(), out.data<double>(), nullptr, n * c, h, w);
    if (tape_on({&x})) {
        auto xi = x.impl();
        attach(out, "avg_pool3", {xi}, [xi, n, c, h, w](TensorImpl& self) {
            auto bw = [&](auto tag) {
                using T = decltype(tag);
                const T* gy = tgrad_const<T>(self);
                T* gx = tgrad<T>(*xi);
                parallel_for(n * c, [&](i64 b, i64 e) {
                    for (i64 p = b; p < e; ++p) {
                        const T* gyp = gy + p * h * w;
                        T* gxp = gx + p * h * w;
                        for (i64 oh = 0; oh < h; ++oh) {
                            for (i64 ow = 0; ow < w; ++ow) {
                                int cnt = static_cast<int>((std::min<i64>(oh + 1, h - 1) -
                                                            std::max<i64>(oh - 1, 0) + 1) *
                                                           (std::min<i64>(ow + 1, w - 1) -
                                                            std::max<i64>(ow - 1, 0) + 1));
                                T share = static_cast<T>(gyp[oh * w + ow] / cnt);
                                for (i64 kh = -1; kh <= 1; ++kh) {
                                    i64 ih = oh + kh;
                                    if (ih < 0 || ih >= h) continue;
                                    for (i64 kw = -1; kw <= 1; ++kw) {
                                        i64 iw = ow + kw;
                                        if (iw < 0 || iw >= w) continue;
                                        gxp[ih * w + iw] += share;
                                    }
                                }
                            }
                        }
                    }
                });
            };
            if (self.dtype == Dtype::f32)
                bw(float{});
            else
                bw(double{});
        });
    }
    return out;
}

Tensor max_pool3(const Tensor& x) {
    AUTOLC_CHECK(x.shape().size() == 4, "max_pool3: input must be 4-D");
    i64 n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    auto argmax = std::make_shared<std::vector<std::int32_t>>(static_cast<size_t>(n * c * h * w));
    if (x.dtype() == Dtype::f32)
        pool3_forward<float, true>(x.data<float>(), out.data<float>(), argmax->data(), n * c, h, w);
    else
        pool3_forward<double, true>(x.data<double>(), out.data<double>(), argmax->data(), n * c, h,
                                    w);
    if (tape_on({&x})) {
        auto xi = x.impl();
        attach(out, "max_pool3", {xi}, [xi, argmax, n, c, h, w](TensorImpl& self) {
            auto bw = [&](auto tag) {
                using T = decltype(tag);
                const T* gy = tgrad_const<T>(self);
                T* gx = tgrad<T>(*xi);
                parallel_for(n * c, [&](i64 b, i64 e) {
                    for (i64 p = b; p < e; ++p) {
                        const T* gyp = gy + p * h * w;
                        T* gxp = gx + p * h * w;
                        const std::int32_t* ap = argmax->data() + p * h * w;
                        for (i64 i = 0; i < h * w; ++i) gxp[ap[i]] += gyp[i];
                    }
                });
            };
            if (self.dtype == Dtype::f32)
                bw(float{});
            else
                bw(double{});
        });
    }
    return out;
}

namespace {

struct LerpAxis {
    std::vector<i64> i0, i1;
    std::vector<double> w1;  // weight of i1; weight of i0 is 1-w1
};

LerpAxis lerp_axis(i64 in, i64 out) {
    LerpAxis a;
    a.i0.resize(static_cast<size_t>(out));
    a.i1.resize(static_cast<size_t>(out));
    a.w1.resize(static_cast<size_t>(out));
    double scale = static_cast<double>(in) / static_cast<double>(out);
    for (i64 o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        double f = std::floor(src);
        i64 lo = static_cast<i64>(f);
        double w = src - f;
        if (lo < 0) {
            lo = 0;
            w = 0.0;
        }
        if (lo >= in - 1) {
            lo = in - 1;
            w = 0.0;
        }
        a.i0[o] = lo;
        a.i1[o] = std::min<i64>(lo + 1, in - 1);
        a.w1[o] = w;
    }
    return a;
}

}  // namespace

Tensor resize_bilinear_hw(const Tensor& x, i64 out_h, i64 out_w) {
    AUTOLC_CHECK(x.shape().size() == 4, "resize: input must be 4-D");
    AUTOLC_CHECK(out_h >= 1 && out_w >= 1, "resize: output extent < 1");
    i64 n = x.shape()[0], c = x.shape()[1], ih = x.shape()[2], iw = x.shape()[3];
    LerpAxis ay = lerp_axis(ih, out_h);
    LerpAxis ax = lerp_axis(iw, out_w);
    Tensor out = Tensor::zeros({n, c, out_h, out_w}, x.dtype());
    auto run = [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>();
        T* po = out.data<T>();
        parallel_for(n * c, [&](i64 b, i64 e) {
            for (i64 p = b; p < e; ++p) {
                const T* xp = px + p * ih * iw;
                T* op = po + p * out_h * out_w;
                for (i64 oh = 0; oh < out_h; ++oh) {
                    const T* r0 = xp + ay.i0[oh] * iw;
                    const T* r1 = xp + ay.i1[oh] * iw;
                    double wy = ay.w1[oh];
                    T* orow = op + oh * out_w;
                    for (i64 ow = 0; ow < out_w; ++ow) {
                        double wx = ax.w1[ow];
                        double v00 = r0[ax.i0[ow]], v01 = r0[ax.i1[ow]];
                        double v10 = r1[ax.i0[ow]], v11 = r1[ax.i1[ow]];
                        double top = v00 + (v01 - v00) * wx;
                        double bot = v10 + (v11 - v10) * wx;
                        orow[ow] = static_cast<T>(top + (bot - top) * wy);
                    }
                }
            }
        });
    };
    if (x.dtype() == Dtype::f32)
        run(float{});
    else
        run(double{});

    if (tape_on({&x})) {
        auto xi = x.impl();
        attach(out, "resize_bilinear", {xi}, [xi, ay, ax, n, c, ih, iw, out_h, out_w](TensorImpl& self) {
            auto bw = [&](auto tag) {
                using T = decltype(tag);
                const T* gy = tgrad_const<T>(self);
                T* gx = tgrad<T>(*xi);
                parallel_for(n * c, [&](i64 b, i64 e) {
                    for (i64 p = b; p < e; ++p) {
                        const T* gyp = gy + p * out_h * out_w;
                        T* gxp = gx + p * ih * iw;
                        for (i64 oh = 0; oh < out_h; ++oh) {
                            double wy = ay.w1[oh];
                            T* r0 = gxp + ay.i0[oh] * iw;
                            T* r1 = gxp + ay.i1[oh] * iw;
                            const T* grow = gyp + oh * out_w;
                            for (i64 ow = 0; ow < out_w; ++ow) {
                                double wx = ax.w1[ow];
                                double g = grow[ow];
                                r0[ax.i0[ow]] += static_cast<T>(g * (1 - wy) * (1 - wx));
                                r0[ax.i1[ow]] += static_cast<T>(g * (1 - wy) * wx);
                                r1[ax.i0[ow]] += static_cast<T>(g * wy * (1 - wx));
                                r1[ax.i1[ow]] += static_cast<T>(g * wy * wx);
                            }
                        }
                    }
                });
            };
            if (self.dtype == Dtype::f32)
                bw(float{});
            else
                bw(double{});
        });
    }
    return out;
}

Tensor bilinear_resize(const Tensor& x, double factor) {
    AUTOLC_CHECK(factor == 0.5 || factor == 2.0 || factor == 4.0,
                 "bilinear_resize: factor must be 1/2, 2 or 4");
    i64 ih = x.shape()[2], iw = x.shape()[3];
    i64 oh = static_cast<i64>(std::llround(ih * factor));
    i64 ow = static_cast<i64>(std::llround(iw * factor));
    AUTOLC_CHECK(oh >= 1 && ow >= 1, "bilinear_resize: output extent < 1");
    return resize_bilinear_hw(x, oh, ow);
}

Tensor global_avg_pool(const Tensor& x) {
    AUTOLC_CHECK(x.shape().size() == 4, "global_avg_pool: input must be 4-D");
    i64 n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    Tensor out = Tensor::zeros({n, c, 1, 1}, x.dtype());
    auto run = [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>();
        T* po = out.data<T>();
        for (i64 p = 0; p < n * c; ++p) {
            double acc = 0.0;
            const T* xp = px + p * hw;
            for (i64 i = 0; i < hw; ++i) acc += xp[i];
            po[p] = static_cast<T>(acc / hw);
        }
    };
    if (x.dtype() == Dtype::f32)
        run(float{});
    else
        run(double{});
    if (tape_on({&x})) {
        auto xi = x.impl();
        attach(out, "global_avg_pool", {xi}, [xi, n, c, hw](TensorImpl& self) {
            auto bw = [&](auto tag) {
                using T = decltype(tag);
                const T* gy = tgrad_const<T>(self);
                T* gx = tgrad<T>(*xi);
                for (i64 p = 0; p < n * c; ++p) {
                    T g = static_cast<T>(static_cast<double>(gy[p]) / hw);
                    T* gxp = gx + p * hw;
                    for (i64 i = 0; i < hw; ++i) gxp[i] += g;
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

Tensor broadcast_hw(const Tensor& x, i64 h, i64 w) {
    AUTOLC_CHECK(x.shape().size() == 4 && x.shape()[2] == 1 && x.shape()[3] == 1,
                 "broadcast_hw: input must be (N,C,1,1)");
    i64 n = x.shape()[0], c = x.shape()[1];
    Tensor out = Tensor::zeros({n, c, h, w}, x.dtype());
    auto run = [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>();
        T* po = out.data<T>();
        for (i64 p = 0; p < n * c; ++p) std::fill(po + p * h * w, po + (p + 1) * h * w, px[p]);
    };
    if (x.dtype() == Dtype::f32)
        run(float{});
    else
        run(double{});
    if (tape_on({&x})) {
        auto xi = x.impl();
        attach(out, "broadcast_hw", {xi}, [xi, n, c, h, w](TensorImpl& self) {
            auto bw = [&](auto tag) {
                using T = decltype(tag);
                const T* gy = tgrad_const<T>(self);
                T* gx = tgrad<T>(*xi);
                for (i64 p = 0; p < n * c; ++p) {
                    double acc = 0.0;
                    const T* gyp = gy + p * h * w;
                    for (i64 i = 0; i < h * w; ++i) acc += gyp[i];
                    gx[p] += static_cast<T>(acc);
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

Tensor softmax_channel(const Tensor& x) {
    AUTOLC_CHECK(x.shape().size() == 4, "softmax_channel: input must be 4-D");
    i64 n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    auto run = [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>();
        T* po = out.data<T>();
        parallel_for(n, [&](i64 b, i64 e) {
            for (i64 bn = b; bn < e; ++bn) {
                const T* xb = px + bn * c * hw;
                T* ob = po + bn * c * hw;
                for (i64 i = 0; i < hw; ++i) {
                    double mx = -1e300;
                    for (i64 ch = 0; ch < c; ++ch) mx = std::max(mx, static_cast<double>(xb[ch * hw + i]));
                    double denom = 0.0;
                    for (i64 ch = 0; ch < c; ++ch) denom += std::exp(xb[ch * hw + i] - mx);
                    for (i64 ch = 0; ch < c; ++ch)
                        ob[ch * hw + i] = static_cast<T>(std::exp(xb[ch * hw + i] - mx) / denom);
                }
            }
        });
    };
    if (x.dtype() == Dtype::f32)
        run(float{});
    else
        run(double{});
    if (tape_on({&x})) {
        auto xi = x.impl();
        attach(out, "softmax_channel", {xi}, [xi, n, c, hw](TensorImpl& self) {
            auto bw = [&](auto tag) {
                using T = decltype(tag);
                const T* gy = tgrad_const<T>(self);
                const T* p = tdata<T>(self);
                T* gx = tgrad<T>(*xi);
                parallel_for(n, [&](i64 b, i64 e) {
                    for (i64 bn = b; bn < e; ++bn) {
                        const T* pb = p + bn * c * hw;
                        const T* gb = gy + bn * c * hw;
                        T* xb = gx + bn * c * hw;
                        for (i64 i = 0; i < hw; ++i) {
                            double dot = 0.0;
                            for (i64 ch = 0; ch < c; ++ch)
                                dot += static_cast<double>(gb[ch * hw + i]) * pb[ch * hw + i];
                            for (i64 ch = 0; ch < c; ++ch)
                                xb[ch * hw + i] += static_cast<T>(
                                    pb[ch * hw + i] * (static_cast<double>(gb[ch * hw + i]) - dot));
                        }
                    }
                });
            };
            if (self.dtype == Dtype::f32)
                bw(float{});
            else
                bw(double{});
        });
    }
    return out;
}

CeLoss softmax_cross_entropy(const Tensor& logits, const IntTensor& labels, int ignore_index) {
    AUTOLC_CHECK(logits.shape().size() == 4, "cross_entropy: logits must be (N,C,H,W)");
    i64 n = logits.shape()[0], c = logits.shape()[1];
    i64 hw = logits.shape()[2] * logits.shape()[3];
    AUTOLC_CHECK(labels.shape.size() == 3 && labels.shape[0] == n &&
                     labels.shape[1] == logits.shape()[2] && labels.shape[2] == logits.shape()[3],
                 "cross_entropy: label shape mismatch");
    for (i64 i = 0; i < labels.numel(); ++i) {
        std::int32_t y = labels.data[static_cast<size_t>(i)];
        if (y == ignore_index) continue;
        if (y < 0 || y >= c)
            throw ValueError("cross_entropy: label " + std::to_string(y) +
                             " out of range for " + std::to_string(c) + " classes");
    }

    // Probabilities are kept (detached) for the backward pass.
    Tensor probs = Tensor::zeros(logits.shape(), logits.dtype());
    double total = 0.0;
    i64 count = 0;
    auto run = [&](auto tag) {
        using T = decltype(tag);
        const T* px = logits.data<T>();
        T* pp = probs.data<T>();
        for (i64 bn = 0; bn < n; ++bn) {
            const T* xb = px + bn * c * hw;
            T* pb = pp + bn * c * hw;
            for (i64 i = 0; i < hw; ++i) {
                double mx = -1e300;
                for (i64 ch = 0; ch < c; ++ch) mx = std::max(mx, static_cast<double>(xb[ch * hw + i]));
                double denom = 0.0;
                for (i64 ch = 0; ch < c; ++ch) denom += std::exp(xb[ch * hw + i] - mx);
                for (i64 ch = 0; ch < c; ++ch)
                    pb[ch * hw + i] = static_cast<T>(std::exp(xb[ch * hw + i] - mx) / denom);
                std::int32_t y = labels.data[static_cast<size_t>(bn * hw + i)];
                if (y == ignore_index) continue;
                double logp = (xb[y * hw + i] - mx) - std::log(denom);
                total -= logp;
                ++count;
            }
        }
    };
    if (logits.dtype() == Dtype::f32)
        run(float{});
    else
        run(double{});

    CeLoss res;
    res.all_ignored = count == 0;
    res.loss = Tensor::zeros({1}, logits.dtype());
    if (count > 0) res.loss.set(0, total / count);

    if (!res.all_ignored && tape_on({&logits})) {
        auto li = logits.impl();
        auto pi = probs.impl();
        IntTensor labels_copy = labels;
        attach(res.loss, "softmax_cross_entropy", {li},
               [li, pi, labels_copy, n, c, hw, count, ignore_index](TensorImpl& self) {
                   auto bw = [&](auto tag) {
                       using T = decltype(tag);
                       T g = tgrad_const<T>(self)[0];
                       const T* pb = tdata<T>(*pi);
                       T* gx = tgrad<T>(*li);
                       T invcnt = static_cast<T>(1.0 / count);
                       for (i64 bn = 0; bn < n; ++bn) {
                           for (i64 i = 0; i < hw; ++i) {
                               std::int32_t y = labels_copy.data[static_cast<size_t>(bn * hw + i)];
                               if (y == ignore_index) continue;
                               for (i64 ch = 0; ch < c; ++ch) {
                                   i64 idx = (bn * c + ch) * hw + i;
                                   T p = pb[idx];
                                   T target = ch == y ? T(1) : T(0);
                                   gx[idx] += g * (p - target) * invcnt;
                               }
                           }
                       }
                   };
                   if (self.dtype == Dtype::f32)
                       bw(float{});
                   else
                       bw(double{});
               });
    }
    return res;
}

IntTensor argmax_channel(const Tensor& x) {
    AUTOLC_CHECK(x.shape().size() == 4, "argmax_channel: input must be 4-D");
    i64 n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    i64 hw = h * w;
    IntTensor out({n, h, w});
    for (i64 bn = 0; bn < n; ++bn) {
        for (i64 i = 0; i < hw; ++i) {
            double best = x.at((bn * c) * hw + i);
            i64 bidx = 0;
            for (i64 ch = 1; ch < c; ++ch) {
                double v = x.at((bn * c + ch) * hw + i);
                if (v > best) {
                    best = v;
                    bidx = ch;
                }
            }
            out.data[static_cast<size_t>(bn * hw + i)] = static_cast<std::int32_t>(bidx);
        }
    }
    return out;
}

}  // namespace autolc
