#include <algorithm>
#include <cmath>
#include <string>

#include "kernels.hpp"

namespace dpanet {

namespace {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                             b.shape().str());
}

// Per-axis bilinear taps for the 2x upsampler.
struct AxisTaps {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

AxisTaps upsample_taps(int size) {
    AxisTaps t;
    const int out = size * 2;
    t.lo.resize(out);
    t.hi.resize(out);
    t.frac.resize(out);
    for (int i = 0; i < out; ++i) {
        double src = (i + 0.5) / 2.0 - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(size - 1));
        const int i0 = static_cast<int>(std::floor(src));
        t.lo[i] = i0;
        t.hi[i] = std::min(i0 + 1, size - 1);
        t.frac[i] = src - i0;
    }
    return t;
}

}  // namespace

template <typename T>
Tensor<T> activation(const Tensor<T>& input, Activation mode) {
    std::vector<T> out(input.numel());
    auto x = input.values();
    const T slope = static_cast<T>(mode.slope);
    switch (mode.kind) {
        case ActivationKind::relu:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
            break;
        case ActivationKind::leaky_relu:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : slope * x[i];
            break;
        case ActivationKind::sigmoid:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
            break;
    }
    if (auto* tape = BranchTape::active(); tape && mode.kind != ActivationKind::sigmoid) {
        std::vector<std::int64_t> side(out.size());
        for (std::size_t i = 0; i < out.size(); ++i) side[i] = x[i] > T(0);
        tape->exchange(side);
        const T low = mode.kind == ActivationKind::relu ? T(0) : slope;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = side[i] ? x[i] : low * x[i];
    }
    return Tensor<T>::make_result(
        input.shape(), std::move(out), "activation", {input}, [mode, slope](Node<T>& self) {
            Node<T>& in = *self.inputs[0];
            const std::size_t count = self.value.size();
            for (std::size_t i = 0; i < count; ++i) {
                const T g = self.grad[i];
                switch (mode.kind) {
                    case ActivationKind::relu:
                        if (in.value[i] > T(0)) in.grad[i] += g;
                        break;
                    case ActivationKind::leaky_relu:
                        in.grad[i] += in.value[i] > T(0) ? g : slope * g;
                        break;
                    case ActivationKind::sigmoid: {
                        const T s = self.value[i];
                        in.grad[i] += g * s * (T(1) - s);
                        break;
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input) {
    const Shape in = input.shape();
    if (in.h % 2 != 0 || in.w % 2 != 0)
        throw DimensionError("maxpool2: spatial size " + std::to_string(in.h) + "x" +
                             std::to_string(in.w) + " is odd; pad or crop the input to even size");
    const Shape os{in.n, in.c, in.h / 2, in.w / 2};
    std::vector<T> out(os.numel());
    std::vector<std::uint32_t> argmax(os.numel());
    const T* x = input.data();
    for (int nc = 0; nc < in.n * in.c; ++nc) {
        const T* plane = x + static_cast<std::size_t>(nc) * in.plane();
        for (int oy = 0; oy < os.h; ++oy) {
            for (int ox = 0; ox < os.w; ++ox) {
                std::size_t best = static_cast<std::size_t>(2 * oy) * in.w + 2 * ox;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = static_cast<std::size_t>(2 * oy + dy) * in.w + 2 * ox + dx;
                        if (plane[idx] > plane[best]) best = idx;
                    }
                const std::size_t o = static_cast<std::size_t>(nc) * os.plane() +
                                      static_cast<std::size_t>(oy) * os.w + ox;
                out[o] = plane[best];
                argmax[o] = static_cast<std::uint32_t>(best);
            }
        }
    }
    if (auto* tape = BranchTape::active()) {
        std::vector<std::int64_t> winner(argmax.begin(), argmax.end());
        tape->exchange(winner);
        for (std::size_t o = 0; o < out.size(); ++o) {
            argmax[o] = static_cast<std::uint32_t>(winner[o]);
            out[o] = x[(o / os.plane()) * in.plane() + argmax[o]];
        }
    }
    return Tensor<T>::make_result(
        os, std::move(out), "maxpool2", {input},
        [in, os, argmax = std::move(argmax)](Node<T>& self) {
            Node<T>& x = *self.inputs[0];
            for (std::size_t o = 0; o < self.grad.size(); ++o) {
                const std::size_t nc = o / os.plane();
                x.grad[nc * in.plane() + argmax[o]] += self.grad[o];
            }
        });
}

template <typename T>
Tensor<T> upsample_bilinear2(const Tensor<T>& input) {
    const Shape in = input.shape();
    const Shape os{in.n, in.c, in.h * 2, in.w * 2};
    const AxisTaps ty = upsample_taps(in.h);
    const AxisTaps tx = upsample_taps(in.w);
    std::vector<T> out(os.numel());
    const T* x = input.data();
    for (int nc = 0; nc < in.n * in.c; ++nc) {
        const T* plane = x + static_cast<std::size_t>(nc) * in.plane();
        T* dst = out.data() + static_cast<std::size_t>(nc) * os.plane();
        for (int oy = 0; oy < os.h; ++oy) {
            const T fy = static_cast<T>(ty.frac[oy]);
            const T* r0 = plane + static_cast<std::size_t>(ty.lo[oy]) * in.w;
            const T* r1 = plane + static_cast<std::size_t>(ty.hi[oy]) * in.w;
            for (int ox = 0; ox < os.w; ++ox) {
                const T fx = static_cast<T>(tx.frac[ox]);
                const int x0 = tx.lo[ox], x1 = tx.hi[ox];
                const T top = r0[x0] * (T(1) - fx) + r0[x1] * fx;
                const T bot = r1[x0] * (T(1) - fx) + r1[x1] * fx;
                dst[static_cast<std::size_t>(oy) * os.w + ox] = top * (T(1) - fy) + bot * fy;
            }
        }
    }
    return Tensor<T>::make_result(os, std::move(out), "upsample_bilinear2", {input},
                                  [in, os, ty, tx](Node<T>& self) {
                                      Node<T>& x = *self.inputs[0];
                                      for (int nc = 0; nc < in.n * in.c; ++nc) {
                                          T* gin = x.grad.data() + static_cast<std::size_t>(nc) * in.plane();
                                          const T* g = self.grad.data() + static_cast<std::size_t>(nc) * os.plane();
                                          for (int oy = 0; oy < os.h; ++oy) {
                                              const T fy = static_cast<T>(ty.frac[oy]);
                                              T* r0 = gin + static_cast<std::size_t>(ty.lo[oy]) * in.w;
                                              T* r1 = gin + static_cast<std::size_t>(ty.hi[oy]) * in.w;
                                              for (int ox = 0; ox < os.w; ++ox) {
                                                  const T fx = static_cast<T>(tx.frac[ox]);
                                                  const T v = g[static_cast<std::size_t>(oy) * os.w + ox];
                                                  const int x0 = tx.lo[ox], x1 = tx.hi[ox];
                                                  r0[x0] += v * (T(1) - fy) * (T(1) - fx);
                                                  r0[x1] += v * (T(1) - fy) * fx;
                                                  r1[x0] += v * fy * (T(1) - fx);
                                                  r1[x1] += v * fy * fx;
                                              }
                                          }
                                      }
                                  });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs) {
    if (inputs.empty()) throw DimensionError("concat_channels: no inputs");
    const Shape first = inputs.front().shape();
    int channels = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Shape s = inputs[i].shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w)
            throw DimensionError("concat_channels: input " + std::to_string(i) + " has shape " +
                                 s.str() + ", incompatible with input 0 shape " + first.str());
        channels += s.c;
    }
    if (inputs.size() == 1) return inputs.front();
    const Shape os{first.n, channels, first.h, first.w};
    std::vector<T> out(os.numel());
    std::vector<int> widths;
    for (int n = 0; n < first.n; ++n) {
        T* dst = out.data() + static_cast<std::size_t>(n) * channels * first.plane();
        for (const auto& t : inputs) {
            const std::size_t len = static_cast<std::size_t>(t.shape().c) * first.plane();
            std::copy_n(t.data() + n * len, len, dst);
            dst += len;
        }
    }
    for (const auto& t : inputs) widths.push_back(t.shape().c);
    return Tensor<T>::make_result(os, std::move(out), "concat_channels", inputs,
                                  [os, widths](Node<T>& self) {
                                      const std::size_t plane = os.plane();
                                      for (int n = 0; n < os.n; ++n) {
                                          const T* src = self.grad.data() + static_cast<std::size_t>(n) * os.c * plane;
                                          for (std::size_t i = 0; i < widths.size(); ++i) {
                                              const std::size_t len = static_cast<std::size_t>(widths[i]) * plane;
                                              Node<T>& in = *self.inputs[i];
                                              if (in.requires_grad) {
                                                  T* dst = in.grad.data() + n * len;
                                                  for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
                                              }
                                              src += len;
                                          }
                                      }
                                  });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, int begin, int count) {
    const Shape in = input.shape();
    if (begin < 0 || count < 0 || begin + count > in.c)
        throw DimensionError("slice_channels: range [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") outside " + in.str());
    const Shape os{in.n, count, in.h, in.w};
    std::vector<T> out(os.numel());
    const std::size_t len = static_cast<std::size_t>(count) * in.plane();
    for (int n = 0; n < in.n; ++n)
        std::copy_n(input.data() + (static_cast<std::size_t>(n) * in.c + begin) * in.plane(), len,
                    out.data() + n * len);
    return Tensor<T>::make_result(os, std::move(out), "slice_channels", {input},
                                  [in, begin, len](Node<T>& self) {
                                      Node<T>& x = *self.inputs[0];
                                      for (int n = 0; n < in.n; ++n) {
                                          T* dst = x.grad.data() + (static_cast<std::size_t>(n) * in.c + begin) * in.plane();
                                          const T* src = self.grad.data() + n * len;
                                          for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
                                      }
                                  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("add", a, b);
    std::vector<T> out(a.numel());
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return Tensor<T>::make_result(a.shape(), std::move(out), "add", {a, b}, [](Node<T>& self) {
        for (auto& in : self.inputs) {
            if (!in->requires_grad) continue;
            for (std::size_t i = 0; i < self.grad.size(); ++i) in->grad[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("sub", a, b);
    std::vector<T> out(a.numel());
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return Tensor<T>::make_result(a.shape(), std::move(out), "sub", {a, b}, [](Node<T>& self) {
        Node<T>& x = *self.inputs[0];
        Node<T>& y = *self.inputs[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (x.requires_grad) x.grad[i] += self.grad[i];
            if (y.requires_grad) y.grad[i] -= self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.numel());
    auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
    return Tensor<T>::make_result(a.shape(), std::move(out), "scale", {a}, [factor](Node<T>& self) {
        Node<T>& x = *self.inputs[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) x.grad[i] += self.grad[i] * factor;
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    for (T v : a.values()) acc += v;
    return Tensor<T>::make_result({1, 1, 1, 1}, {acc}, "sum", {a}, [](Node<T>& self) {
        Node<T>& x = *self.inputs[0];
        const T g = self.grad[0];
        for (auto& v : x.grad) v += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    if (a.numel() == 0) throw DimensionError("mean: empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& a, const std::vector<T>& weights) {
    if (weights.size() != a.numel())
        throw DimensionError("weighted_sum: " + std::to_string(weights.size()) +
                             " weights for tensor " + a.shape().str());
    T acc = 0;
    auto av = a.values();
    for (std::size_t i = 0; i < weights.size(); ++i) acc += av[i] * weights[i];
    return Tensor<T>::make_result({1, 1, 1, 1}, {acc}, "weighted_sum", {a},
                                  [weights](Node<T>& self) {
                                      Node<T>& x = *self.inputs[0];
                                      const T g = self.grad[0];
                                      for (std::size_t i = 0; i < weights.size(); ++i)
                                          x.grad[i] += g * weights[i];
                                  });
}

template <typename T>
Tensor<T> clamp_values(const Tensor<T>& a, T lo, T hi) {
    std::vector<T> out(a.values().begin(), a.values().end());
    for (T& v : out) v = std::clamp(v, lo, hi);
    return Tensor<T>(a.shape(), std::move(out));
}

#define DPANET_INSTANTIATE_OPS(T)                                                        \
    template Tensor<T> activation(const Tensor<T>&, Activation);                          \
    template Tensor<T> maxpool2(const Tensor<T>&);                                        \
    template Tensor<T> upsample_bilinear2(const Tensor<T>&);                              \
    template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                    \
    template Tensor<T> slice_channels(const Tensor<T>&, int, int);                        \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> scale(const Tensor<T>&, T);                                        \
    template Tensor<T> sum(const Tensor<T>&);                                             \
    template Tensor<T> mean(const Tensor<T>&);                                            \
    template Tensor<T> weighted_sum(const Tensor<T>&, const std::vector<T>&);             \
    template Tensor<T> clamp_values(const Tensor<T>&, T, T);

DPANET_INSTANTIATE_OPS(float)
DPANET_INSTANTIATE_OPS(double)

}  // namespace dpanet
