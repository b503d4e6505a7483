#include "synthaug/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace synthaug::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
T* grad_ptr(Node<T>& parent) {
    return parent.requires_grad ? parent.ensure_grad().storage().data() : nullptr;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape " + shape_to_string(a.shape()) + " vs " +
                                        shape_to_string(b.shape()));
}

template <typename T>
std::vector<Var<T>> defined_only(std::initializer_list<Var<T>> vars) {
    std::vector<Var<T>> out;
    for (const auto& v : vars) {
        if (v.defined()) out.push_back(v);
    }
    return out;
}

// Elementwise unary op: `f(x)` forward, `df(x, y)` derivative given input and output.
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, const char* name, F f, DF df) {
    const auto& xv = x.value().storage();
    BasicTensor<T> out(x.shape());
    auto& ov = out.storage();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = f(xv[i]);
    return make_result<T>(std::move(out), name, {x}, [df](Node<T>& self) {
        auto& p = *self.parents[0];
        T* gx = grad_ptr(p);
        if (!gx) return;
        const auto& xs = p.value.storage();
        const auto& ys = self.value.storage();
        const auto& g = self.grad.storage();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xs[i], ys[i]);
    });
}

// Column matrix for a chunk of samples: rows = Cin*K*K, cols = chunk*Ho*Wo.
template <typename T>
void im2col(const T* x, std::int64_t first, std::int64_t count, std::int64_t cin, std::int64_t h, std::int64_t w,
            int k, int pad, std::int64_t ho, std::int64_t wo, T* col) {
    const std::int64_t cols = count * ho * wo;
    for (std::int64_t c = 0; c < cin; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + ((c * k + ky) * k + kx) * cols;
                for (std::int64_t s = 0; s < count; ++s) {
                    const T* plane = x + ((first + s) * cin + c) * h * w;
                    T* dst = row + s * ho * wo;
                    for (std::int64_t oy = 0; oy < ho; ++oy) {
                        const std::int64_t iy = oy + ky - pad;
                        T* d = dst + oy * wo;
                        if (iy < 0 || iy >= h) {
                            std::fill(d, d + wo, T{0});
                            continue;
                        }
                        const T* src = plane + iy * w;
                        for (std::int64_t ox = 0; ox < wo; ++ox) {
                            const std::int64_t ix = ox + kx - pad;
                            d[ox] = (ix >= 0 && ix < w) ? src[ix] : T{0};
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, std::int64_t first, std::int64_t count, std::int64_t cin, std::int64_t h, std::int64_t w,
            int k, int pad, std::int64_t ho, std::int64_t wo, T* dx) {
    const std::int64_t cols = count * ho * wo;
    for (std::int64_t c = 0; c < cin; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* row = col + ((c * k + ky) * k + kx) * cols;
                for (std::int64_t s = 0; s < count; ++s) {
                    T* plane = dx + ((first + s) * cin + c) * h * w;
                    const T* src = row + s * ho * wo;
                    for (std::int64_t oy = 0; oy < ho; ++oy) {
                        const std::int64_t iy = oy + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        T* d = plane + iy * w;
                        const T* sr = src + oy * wo;
                        const std::int64_t lo = std::max<std::int64_t>(0, pad - kx);
                        const std::int64_t hi = std::min<std::int64_t>(wo, w + pad - kx);
                        for (std::int64_t ox = lo; ox < hi; ++ox) d[ox + kx - pad] += sr[ox];
                    }
                }
            }
        }
    }
}

// Samples per im2col chunk, bounding the column buffer to ~16M elements.
std::int64_t conv_chunk(std::int64_t n, std::int64_t rows, std::int64_t plane) {
    const std::int64_t budget = std::int64_t{1} << 24;
    return std::clamp<std::int64_t>(budget / std::max<std::int64_t>(1, rows * plane), 1, n);
}

struct ReduceLayout {
    std::int64_t outer;    // N
    std::int64_t channels; // C
    std::int64_t inner;    // product of trailing dims
};

template <typename T>
ReduceLayout channel_layout(const Var<T>& x, const char* op) {
    require(x.shape().size() >= 2, std::string(op) + ": need rank >= 2, got " + shape_to_string(x.shape()));
    ReduceLayout l{x.shape()[0], x.shape()[1], 1};
    for (std::size_t i = 2; i < x.shape().size(); ++i) l.inner *= x.shape()[i];
    return l;
}

} // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "add");
    BasicTensor<T> out(a.shape());
    const auto& av = a.value().storage();
    const auto& bv = b.value().storage();
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    return make_result<T>(std::move(out), "add", {a, b}, [](Node<T>& self) {
        const auto& g = self.grad.storage();
        for (auto& p : self.parents) {
            if (T* gp = grad_ptr(*p)) {
                for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
            }
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "sub");
    BasicTensor<T> out(a.shape());
    const auto& av = a.value().storage();
    const auto& bv = b.value().storage();
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    return make_result<T>(std::move(out), "sub", {a, b}, [](Node<T>& self) {
        const auto& g = self.grad.storage();
        if (T* ga = grad_ptr(*self.parents[0])) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (T* gb = grad_ptr(*self.parents[1])) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "mul");
    BasicTensor<T> out(a.shape());
    const auto& av = a.value().storage();
    const auto& bv = b.value().storage();
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    return make_result<T>(std::move(out), "mul", {a, b}, [](Node<T>& self) {
        const auto& g = self.grad.storage();
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (T* ga = grad_ptr(pa)) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb.value[i];
        }
        if (T* gb = grad_ptr(pb)) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa.value[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    BasicTensor<T> out(a.shape());
    const auto& av = a.value().storage();
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
    return make_result<T>(std::move(out), "scale", {a}, [s](Node<T>& self) {
        if (T* ga = grad_ptr(*self.parents[0])) {
            const auto& g = self.grad.storage();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
        }
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
    BasicTensor<T> out(a.shape());
    const auto& av = a.value().storage();
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + s;
    return make_result<T>(std::move(out), "add_scalar", {a}, [](Node<T>& self) {
        if (T* ga = grad_ptr(*self.parents[0])) {
            const auto& g = self.grad.storage();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
    });
}

template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias) {
    const auto l = channel_layout(x, "add_channel_bias");
    require(bias.shape() == Shape{l.outer, l.channels},
            "add_channel_bias: bias " + shape_to_string(bias.shape()) + " for input " + shape_to_string(x.shape()));
    BasicTensor<T> out(x.shape());
    const auto& xv = x.value().storage();
    const auto& bv = bias.value().storage();
    for (std::int64_t nc = 0; nc < l.outer * l.channels; ++nc) {
        for (std::int64_t i = 0; i < l.inner; ++i) out[nc * l.inner + i] = xv[nc * l.inner + i] + bv[nc];
    }
    return make_result<T>(std::move(out), "add_channel_bias", {x, bias}, [l](Node<T>& self) {
        const auto& g = self.grad.storage();
        if (T* gx = grad_ptr(*self.parents[0])) {
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (T* gb = grad_ptr(*self.parents[1])) {
            for (std::int64_t nc = 0; nc < l.outer * l.channels; ++nc) {
                T acc{0};
                for (std::int64_t i = 0; i < l.inner; ++i) acc += g[nc * l.inner + i];
                gb[nc] += acc;
            }
        }
    });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    return unary(x, "relu", [](T v) { return v > T{0} ? v : T{0}; },
                 [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
    return unary(x, "leaky_relu", [slope](T v) { return v > T{0} ? v : slope * v; },
                 [slope](T v, T) { return v > T{0} ? T{1} : slope; });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
    return unary(
        x, "silu", [](T v) { return v / (T{1} + std::exp(-v)); },
        [](T v, T) {
            const T s = T{1} / (T{1} + std::exp(-v));
            return s * (T{1} + v * (T{1} - s));
        });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
    return unary(x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    return unary(x, "sigmoid", [](T v) { return T{1} / (T{1} + std::exp(-v)); },
                 [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
    return unary(
        x, "softplus", [](T v) { return v > T{0} ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
        [](T v, T) { return T{1} / (T{1} + std::exp(-v)); });
}

template <typename T>
Var<T> log(const Var<T>& x) {
    for (T v : x.value().storage()) {
        if (!(v > T{0})) throw NumericError("log of non-positive value");
    }
    return unary(x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    require(x.shape().size() == 2 && weight.shape().size() == 2 && x.shape()[1] == weight.shape()[1],
            "linear: input " + shape_to_string(x.shape()) + " vs weight " + shape_to_string(weight.shape()));
    const std::int64_t n = x.shape()[0];
    const std::int64_t in = x.shape()[1];
    const std::int64_t outf = weight.shape()[0];
    if (bias.defined()) {
        require(bias.shape() == Shape{outf}, "linear: bias " + shape_to_string(bias.shape()));
    }
    BasicTensor<T> out({n, outf});
    MapMat<T> y(out.storage().data(), n, outf);
    y.noalias() = CMapMat<T>(x.value().storage().data(), n, in) *
                  CMapMat<T>(weight.value().storage().data(), outf, in).transpose();
    if (bias.defined()) {
        for (std::int64_t r = 0; r < n; ++r) {
            for (std::int64_t c = 0; c < outf; ++c) y(r, c) += bias.value()[static_cast<std::size_t>(c)];
        }
    }
    const bool has_bias = bias.defined();
    return make_result<T>(std::move(out), "linear", defined_only<T>({x, weight, bias}),
                          [n, in, outf, has_bias](Node<T>& self) {
                              auto& px = *self.parents[0];
                              auto& pw = *self.parents[1];
                              CMapMat<T> g(self.grad.storage().data(), n, outf);
                              if (T* gx = grad_ptr(px)) {
                                  MapMat<T>(gx, n, in).noalias() += g * CMapMat<T>(pw.value.storage().data(), outf, in);
                              }
                              if (T* gw = grad_ptr(pw)) {
                                  MapMat<T>(gw, outf, in).noalias() +=
                                      g.transpose() * CMapMat<T>(px.value.storage().data(), n, in);
                              }
                              if (has_bias) {
                                  if (T* gb = grad_ptr(*self.parents[2])) {
                                      for (std::int64_t r = 0; r < n; ++r) {
                                          for (std::int64_t c = 0; c < outf; ++c) gb[c] += g(r, c);
                                      }
                                  }
                              }
                          });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int padding) {
    require(x.shape().size() == 4 && weight.shape().size() == 4,
            "conv2d: input " + shape_to_string(x.shape()) + ", weight " + shape_to_string(weight.shape()));
    const std::int64_t n = x.shape()[0], cin = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const std::int64_t cout = weight.shape()[0];
    const int k = static_cast<int>(weight.shape()[2]);
    require(weight.shape()[1] == cin && weight.shape()[3] == k,
            "conv2d: weight " + shape_to_string(weight.shape()) + " incompatible with input " +
                shape_to_string(x.shape()));
    require(padding >= 0, "conv2d: negative padding");
    const std::int64_t ho = h + 2 * padding - k + 1;
    const std::int64_t wo = w + 2 * padding - k + 1;
    require(ho > 0 && wo > 0, "conv2d: kernel larger than padded input " + shape_to_string(x.shape()));
    if (bias.defined()) require(bias.shape() == Shape{cout}, "conv2d: bias " + shape_to_string(bias.shape()));

    const std::int64_t rows = cin * k * k;
    const std::int64_t plane = ho * wo;
    const std::int64_t chunk = conv_chunk(n, rows, plane);

    BasicTensor<T> out({n, cout, ho, wo});
    {
        std::vector<T> col(static_cast<std::size_t>(rows * chunk * plane));
        std::vector<T> res(static_cast<std::size_t>(cout * chunk * plane));
        CMapMat<T> wm(weight.value().storage().data(), cout, rows);
        for (std::int64_t first = 0; first < n; first += chunk) {
            const std::int64_t cnt = std::min(chunk, n - first);
            im2col(x.value().storage().data(), first, cnt, cin, h, w, k, padding, ho, wo, col.data());
            MapMat<T> r(res.data(), cout, cnt * plane);
            r.noalias() = wm * CMapMat<T>(col.data(), rows, cnt * plane);
            for (std::int64_t s = 0; s < cnt; ++s) {
                for (std::int64_t co = 0; co < cout; ++co) {
                    const T b = bias.defined() ? bias.value()[static_cast<std::size_t>(co)] : T{0};
                    const T* src = res.data() + co * cnt * plane + s * plane;
                    T* dst = out.storage().data() + ((first + s) * cout + co) * plane;
                    for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] + b;
                }
            }
        }
    }

    const bool has_bias = bias.defined();
    return make_result<T>(
        std::move(out), "conv2d", defined_only<T>({x, weight, bias}),
        [=](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            T* gx = grad_ptr(px);
            T* gw = grad_ptr(pw);
            T* gb = has_bias ? grad_ptr(*self.parents[2]) : nullptr;
            const T* g = self.grad.storage().data();
            if (gb) {
                for (std::int64_t s = 0; s < n; ++s) {
                    for (std::int64_t co = 0; co < cout; ++co) {
                        const T* gp = g + (s * cout + co) * plane;
                        T acc{0};
                        for (std::int64_t i = 0; i < plane; ++i) acc += gp[i];
                        gb[co] += acc;
                    }
                }
            }
            if (!gx && !gw) return;
            std::vector<T> col(static_cast<std::size_t>(rows * chunk * plane));
            std::vector<T> gcol_out(static_cast<std::size_t>(cout * chunk * plane));
            CMapMat<T> wm(pw.value.storage().data(), cout, rows);
            for (std::int64_t first = 0; first < n; first += chunk) {
                const std::int64_t cnt = std::min(chunk, n - first);
                // Gather dOut for the chunk into [Cout, cnt * plane].
                for (std::int64_t s = 0; s < cnt; ++s) {
                    for (std::int64_t co = 0; co < cout; ++co) {
                        const T* src = g + ((first + s) * cout + co) * plane;
                        std::copy(src, src + plane, gcol_out.data() + co * cnt * plane + s * plane);
                    }
                }
                CMapMat<T> gm(gcol_out.data(), cout, cnt * plane);
                if (gw) {
                    im2col(px.value.storage().data(), first, cnt, cin, h, w, k, padding, ho, wo, col.data());
                    MapMat<T>(gw, cout, rows).noalias() += gm * CMapMat<T>(col.data(), rows, cnt * plane).transpose();
                }
                if (gx) {
                    MapMat<T> gc(col.data(), rows, cnt * plane);
                    gc.noalias() = wm.transpose() * gm;
                    col2im(col.data(), first, cnt, cin, h, w, k, padding, ho, wo, gx);
                }
            }
        });
}

template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
    require(x.shape().size() == 4 && x.shape()[2] % 2 == 0 && x.shape()[3] % 2 == 0,
            "avg_pool2: need NCHW with even H, W; got " + shape_to_string(x.shape()));
    const std::int64_t nc = x.shape()[0] * x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const std::int64_t ho = h / 2, wo = w / 2;
    BasicTensor<T> out({x.shape()[0], x.shape()[1], ho, wo});
    const T* xv = x.value().storage().data();
    for (std::int64_t p = 0; p < nc; ++p) {
        for (std::int64_t oy = 0; oy < ho; ++oy) {
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                const T* s = xv + p * h * w + 2 * oy * w + 2 * ox;
                out[static_cast<std::size_t>(p * ho * wo + oy * wo + ox)] = (s[0] + s[1] + s[w] + s[w + 1]) * T(0.25);
            }
        }
    }
    return make_result<T>(std::move(out), "avg_pool2", {x}, [nc, h, w, ho, wo](Node<T>& self) {
        T* gx = grad_ptr(*self.parents[0]);
        if (!gx) return;
        const T* g = self.grad.storage().data();
        for (std::int64_t p = 0; p < nc; ++p) {
            for (std::int64_t oy = 0; oy < ho; ++oy) {
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    const T v = g[p * ho * wo + oy * wo + ox] * T(0.25);
                    T* d = gx + p * h * w + 2 * oy * w + 2 * ox;
                    d[0] += v;
                    d[1] += v;
                    d[w] += v;
                    d[w + 1] += v;
                }
            }
        }
    });
}

template <typename T>
Var<T> max_pool2(const Var<T>& x) {
    require(x.shape().size() == 4 && x.shape()[2] % 2 == 0 && x.shape()[3] % 2 == 0,
            "max_pool2: need NCHW with even H, W; got " + shape_to_string(x.shape()));
    const std::int64_t nc = x.shape()[0] * x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const std::int64_t ho = h / 2, wo = w / 2;
    BasicTensor<T> out({x.shape()[0], x.shape()[1], ho, wo});
    std::vector<std::int64_t> argmax(static_cast<std::size_t>(nc * ho * wo));
    const T* xv = x.value().storage().data();
    for (std::int64_t p = 0; p < nc; ++p) {
        for (std::int64_t oy = 0; oy < ho; ++oy) {
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                const std::int64_t base = p * h * w + 2 * oy * w + 2 * ox;
                std::int64_t best = base;
                for (std::int64_t off : {base + 1, base + w, base + w + 1}) {
                    if (xv[off] > xv[best]) best = off;
                }
                const auto o = static_cast<std::size_t>(p * ho * wo + oy * wo + ox);
                out[o] = xv[best];
                argmax[o] = best;
            }
        }
    }
    return make_result<T>(std::move(out), "max_pool2", {x}, [argmax = std::move(argmax)](Node<T>& self) {
        T* gx = grad_ptr(*self.parents[0]);
        if (!gx) return;
        const auto& g = self.grad.storage();
        for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
    });
}

template <typename T>
Var<T> upsample_nearest2(const Var<T>& x) {
    require(x.shape().size() == 4, "upsample_nearest2: need NCHW, got " + shape_to_string(x.shape()));
    const std::int64_t nc = x.shape()[0] * x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const std::int64_t ho = 2 * h, wo = 2 * w;
    BasicTensor<T> out({x.shape()[0], x.shape()[1], ho, wo});
    const T* xv = x.value().storage().data();
    for (std::int64_t p = 0; p < nc; ++p) {
        for (std::int64_t oy = 0; oy < ho; ++oy) {
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                out[static_cast<std::size_t>(p * ho * wo + oy * wo + ox)] = xv[p * h * w + (oy / 2) * w + ox / 2];
            }
        }
    }
    return make_result<T>(std::move(out), "upsample_nearest2", {x}, [nc, h, w, ho, wo](Node<T>& self) {
        T* gx = grad_ptr(*self.parents[0]);
        if (!gx) return;
        const T* g = self.grad.storage().data();
        for (std::int64_t p = 0; p < nc; ++p) {
            for (std::int64_t oy = 0; oy < ho; ++oy) {
                for (std::int64_t ox = 0; ox < wo; ++ox) gx[p * h * w + (oy / 2) * w + ox / 2] += g[p * ho * wo + oy * wo + ox];
            }
        }
    });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BasicTensor<T>& running_mean,
                  BasicTensor<T>& running_var, bool training, T momentum, T eps) {
    const auto l = channel_layout(x, "batch_norm");
    const Shape cshape{l.channels};
    require(gamma.shape() == cshape && beta.shape() == cshape && running_mean.shape() == cshape &&
                running_var.shape() == cshape,
            "batch_norm: parameter shapes do not match " + std::to_string(l.channels) + " channels");
    const std::int64_t m = l.outer * l.inner;
    require(!training || m >= 2, "batch_norm: training needs at least 2 values per channel");

    const T* xv = x.value().storage().data();
    std::vector<T> mean_c(static_cast<std::size_t>(l.channels)), inv_std(static_cast<std::size_t>(l.channels));
    for (std::int64_t c = 0; c < l.channels; ++c) {
        if (training) {
            T s{0};
            for (std::int64_t nn = 0; nn < l.outer; ++nn) {
                const T* p = xv + (nn * l.channels + c) * l.inner;
                for (std::int64_t i = 0; i < l.inner; ++i) s += p[i];
            }
            const T mu = s / static_cast<T>(m);
            T ss{0};
            for (std::int64_t nn = 0; nn < l.outer; ++nn) {
                const T* p = xv + (nn * l.channels + c) * l.inner;
                for (std::int64_t i = 0; i < l.inner; ++i) ss += (p[i] - mu) * (p[i] - mu);
            }
            const T var = ss / static_cast<T>(m);
            mean_c[c] = mu;
            inv_std[c] = T{1} / std::sqrt(var + eps);
            running_mean[c] = momentum * running_mean[c] + (T{1} - momentum) * mu;
            running_var[c] = momentum * running_var[c] + (T{1} - momentum) * var * static_cast<T>(m) / static_cast<T>(m - 1);
        } else {
            mean_c[c] = running_mean[c];
            inv_std[c] = T{1} / std::sqrt(running_var[c] + eps);
        }
    }

    BasicTensor<T> out(x.shape());
    BasicTensor<T> xhat(x.shape());
    for (std::int64_t nn = 0; nn < l.outer; ++nn) {
        for (std::int64_t c = 0; c < l.channels; ++c) {
            const std::int64_t off = (nn * l.channels + c) * l.inner;
            const T gm = gamma.value()[c], bt = beta.value()[c];
            for (std::int64_t i = 0; i < l.inner; ++i) {
                const T xh = (xv[off + i] - mean_c[c]) * inv_std[c];
                xhat[off + i] = xh;
                out[off + i] = gm * xh + bt;
            }
        }
    }

    return make_result<T>(
        std::move(out), "batch_norm", {x, gamma, beta},
        [l, m, training, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            T* gx = grad_ptr(px);
            T* gg = grad_ptr(pg);
            T* gb = grad_ptr(*self.parents[2]);
            const T* g = self.grad.storage().data();
            for (std::int64_t c = 0; c < l.channels; ++c) {
                T sum_g{0}, sum_gx{0};
                for (std::int64_t nn = 0; nn < l.outer; ++nn) {
                    const std::int64_t off = (nn * l.channels + c) * l.inner;
                    for (std::int64_t i = 0; i < l.inner; ++i) {
                        sum_g += g[off + i];
                        sum_gx += g[off + i] * xhat[off + i];
                    }
                }
                if (gg) gg[c] += sum_gx;
                if (gb) gb[c] += sum_g;
                if (!gx) continue;
                const T gm = pg.value[c];
                for (std::int64_t nn = 0; nn < l.outer; ++nn) {
                    const std::int64_t off = (nn * l.channels + c) * l.inner;
                    for (std::int64_t i = 0; i < l.inner; ++i) {
                        if (training) {
                            gx[off + i] += gm * inv_std[c] / static_cast<T>(m) *
                                           (static_cast<T>(m) * g[off + i] - sum_g - xhat[off + i] * sum_gx);
                        } else {
                            gx[off + i] += gm * inv_std[c] * g[off + i];
                        }
                    }
                }
            }
        });
}

template <typename T>
Var<T> dropout(const Var<T>& x, T p, bool training, RngStream& rng) {
    if (!training || p <= T{0}) return x;
    require(p < T{1}, "dropout: p must be < 1");
    BasicTensor<T> mask(x.shape());
    const T keep_scale = T{1} / (T{1} - p);
    for (auto& v : mask.storage()) v = rng.uniform() >= static_cast<double>(p) ? keep_scale : T{0};
    return mul(x, Var<T>::constant(std::move(mask)));
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    BasicTensor<T> out = x.value().reshaped(std::move(shape));
    return make_result<T>(std::move(out), "reshape", {x}, [](Node<T>& self) {
        if (T* gx = grad_ptr(*self.parents[0])) {
            const auto& g = self.grad.storage();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
    });
}

template <typename T>
Var<T> flatten(const Var<T>& x) {
    const std::int64_t n = x.shape().at(0);
    return reshape(x, Shape{n, shape_numel(x.shape()) / n});
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
    require(!parts.empty(), "concat: no inputs");
    const Shape& s0 = parts[0].shape();
    require(axis < s0.size(), "concat: axis out of range for " + shape_to_string(s0));
    Shape out_shape = s0;
    out_shape[axis] = 0;
    std::vector<std::int64_t> widths;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == s0[d];
        require(ok, "concat: shape " + shape_to_string(s) + " incompatible with " + shape_to_string(s0) +
                        " along axis " + std::to_string(axis));
        out_shape[axis] += s[axis];
        widths.push_back(s[axis]);
    }
    std::int64_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
    for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
    const std::int64_t total = out_shape[axis];

    BasicTensor<T> out(out_shape);
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const T* src = parts[k].value().storage().data();
        const std::int64_t span = widths[k] * inner;
        for (std::int64_t o = 0; o < outer; ++o) {
            std::copy(src + o * span, src + (o + 1) * span, out.storage().data() + o * total * inner + offset * inner);
        }
        offset += widths[k];
    }
    std::vector<Var<T>> parents(parts.begin(), parts.end());
    return make_result<T>(std::move(out), "concat", std::move(parents),
                          [widths, outer, inner, total](Node<T>& self) {
                              const T* g = self.grad.storage().data();
                              std::int64_t offset = 0;
                              for (std::size_t k = 0; k < widths.size(); ++k) {
                                  const std::int64_t span = widths[k] * inner;
                                  if (T* gp = grad_ptr(*self.parents[k])) {
                                      for (std::int64_t o = 0; o < outer; ++o) {
                                          const T* src = g + o * total * inner + offset * inner;
                                          for (std::int64_t i = 0; i < span; ++i) gp[o * span + i] += src[i];
                                      }
                                  }
                                  offset += widths[k];
                              }
                          });
}

template <typename T>
Var<T> concat(const Var<T>& a, const Var<T>& b, std::size_t axis) {
    const Var<T> parts[] = {a, b};
    return concat<T>(std::span<const Var<T>>(parts), axis);
}

template <typename T>
Var<T> slice_batch(const Var<T>& x, std::int64_t start, std::int64_t count) {
    require(!x.shape().empty() && start >= 0 && count > 0 && start + count <= x.shape()[0],
            "slice_batch: rows [" + std::to_string(start) + ", " + std::to_string(start + count) + ") of " +
                shape_to_string(x.shape()));
    Shape s = x.shape();
    const std::int64_t row = shape_numel(s) / s[0];
    s[0] = count;
    const T* src = x.value().storage().data() + start * row;
    BasicTensor<T> out(s, std::vector<T>(src, src + count * row));
    return make_result<T>(std::move(out), "slice_batch", {x}, [start, row](Node<T>& self) {
        if (T* gx = grad_ptr(*self.parents[0])) {
            const auto& g = self.grad.storage();
            for (std::size_t i = 0; i < g.size(); ++i) gx[start * row + static_cast<std::int64_t>(i)] += g[i];
        }
    });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
    T acc{0};
    for (T v : x.value().storage()) acc += v;
    return make_result<T>(BasicTensor<T>::scalar(acc), "sum", {x}, [](Node<T>& self) {
        if (T* gx = grad_ptr(*self.parents[0])) {
            const T g = self.grad[0];
            const std::size_t n = self.parents[0]->value.size();
            for (std::size_t i = 0; i < n; ++i) gx[i] += g;
        }
    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    return scale(sum(x), T{1} / static_cast<T>(x.value().size()));
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "mse");
    const auto& av = a.value().storage();
    const auto& bv = b.value().storage();
    const T inv_n = T{1} / static_cast<T>(av.size());
    T acc{0};
    for (std::size_t i = 0; i < av.size(); ++i) acc += (av[i] - bv[i]) * (av[i] - bv[i]);
    return make_result<T>(BasicTensor<T>::scalar(acc * inv_n), "mse", {a, b}, [inv_n](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const T g = self.grad[0] * T{2} * inv_n;
        T* ga = grad_ptr(pa);
        T* gb = grad_ptr(pb);
        for (std::size_t i = 0; i < pa.value.size(); ++i) {
            const T d = (pa.value[i] - pb.value[i]) * g;
            if (ga) ga[i] += d;
            if (gb) gb[i] -= d;
        }
    });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels) {
    require(logits.shape().size() == 2 && logits.shape()[0] == static_cast<std::int64_t>(labels.size()),
            "softmax_cross_entropy: logits " + shape_to_string(logits.shape()) + " with " +
                std::to_string(labels.size()) + " labels");
    const std::int64_t n = logits.shape()[0], c = logits.shape()[1];
    BasicTensor<T> probs(logits.shape());
    T loss{0};
    for (std::int64_t r = 0; r < n; ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        require(y >= 0 && y < c, "softmax_cross_entropy: label " + std::to_string(y) + " out of range");
        const T* z = logits.value().storage().data() + r * c;
        const T zmax = *std::max_element(z, z + c);
        T denom{0};
        for (std::int64_t j = 0; j < c; ++j) denom += std::exp(z[j] - zmax);
        for (std::int64_t j = 0; j < c; ++j) probs[static_cast<std::size_t>(r * c + j)] = std::exp(z[j] - zmax) / denom;
        loss += std::log(denom) + zmax - z[y];
    }
    std::vector<int> ys(labels.begin(), labels.end());
    return make_result<T>(BasicTensor<T>::scalar(loss / static_cast<T>(n)), "softmax_cross_entropy", {logits},
                          [n, c, ys = std::move(ys), probs = std::move(probs)](Node<T>& self) {
                              T* gz = grad_ptr(*self.parents[0]);
                              if (!gz) return;
                              const T g = self.grad[0] / static_cast<T>(n);
                              for (std::int64_t r = 0; r < n; ++r) {
                                  for (std::int64_t j = 0; j < c; ++j) {
                                      const T target = j == ys[static_cast<std::size_t>(r)] ? T{1} : T{0};
                                      gz[r * c + j] += g * (probs[static_cast<std::size_t>(r * c + j)] - target);
                                  }
                              }
                          });
}

#define SYNTHAUG_INSTANTIATE_OPS(T)                                                                              \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                           \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                                           \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                           \
    template Var<T> scale(const Var<T>&, T);                                                                     \
    template Var<T> add_scalar(const Var<T>&, T);                                                                \
    template Var<T> add_channel_bias(const Var<T>&, const Var<T>&);                                              \
    template Var<T> relu(const Var<T>&);                                                                         \
    template Var<T> leaky_relu(const Var<T>&, T);                                                                \
    template Var<T> silu(const Var<T>&);                                                                         \
    template Var<T> tanh(const Var<T>&);                                                                         \
    template Var<T> sigmoid(const Var<T>&);                                                                      \
    template Var<T> softplus(const Var<T>&);                                                                     \
    template Var<T> log(const Var<T>&);                                                                          \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                         \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int);                                    \
    template Var<T> avg_pool2(const Var<T>&);                                                                    \
    template Var<T> max_pool2(const Var<T>&);                                                                    \
    template Var<T> upsample_nearest2(const Var<T>&);                                                            \
    template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, BasicTensor<T>&, BasicTensor<T>&,     \
                               bool, T, T);                                                                      \
    template Var<T> dropout(const Var<T>&, T, bool, RngStream&);                                                 \
    template Var<T> reshape(const Var<T>&, Shape);                                                               \
    template Var<T> flatten(const Var<T>&);                                                                      \
    template Var<T> concat(std::span<const Var<T>>, std::size_t);                                                \
    template Var<T> concat(const Var<T>&, const Var<T>&, std::size_t);                                           \
    template Var<T> slice_batch(const Var<T>&, std::int64_t, std::int64_t);                                     \
    template Var<T> sum(const Var<T>&);                                                                          \
    template Var<T> mean(const Var<T>&);                                                                         \
    template Var<T> mse(const Var<T>&, const Var<T>&);                                                           \
    template Var<T> softmax_cross_entropy(const Var<T>&, std::span<const int>);

SYNTHAUG_INSTANTIATE_OPS(float)
SYNTHAUG_INSTANTIATE_OPS(double)

#undef SYNTHAUG_INSTANTIATE_OPS

} // namespace synthaug::ad
