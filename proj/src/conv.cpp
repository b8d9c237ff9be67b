#include <algorithm>
#include <string>

#include "kernels.hpp"

namespace dpanet {

namespace {

int g_threads = 1;

template <typename T>
void check_conv_shapes(const Tensor<T>& input, const ConvParams<T>& p) {
    const Shape& in = input.shape();
    const Shape& w = p.weight.shape();
    if (!p.weight.defined() || !p.bias.defined())
        throw DimensionError("conv2d: weight and bias must be defined");
    if (w.h != w.w)
        throw DimensionError("conv2d: kernel must be square, got weight " + w.str());
    if (in.c != w.c)
        throw DimensionError("conv2d: input " + in.str() + " has " + std::to_string(in.c) +
                             " channels but weight " + w.str() + " expects " + std::to_string(w.c));
    if (p.bias.shape() != Shape{w.n, 1, 1, 1})
        throw DimensionError("conv2d: bias " + p.bias.shape().str() + " inconsistent with weight " +
                             w.str());
    if (p.stride < 1 || p.padding < 0)
        throw DimensionError("conv2d: stride must be positive and padding non-negative");
    if (in.h + 2 * p.padding < w.h || in.w + 2 * p.padding < w.w)
        throw DimensionError("conv2d: input " + in.str() + " smaller than kernel of weight " + w.str());
}

}  // namespace

void set_num_threads(int threads) { g_threads = std::max(1, threads); }
int num_threads() { return g_threads; }

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& p) {
    using namespace kernels;
    check_conv_shapes(input, p);
    const Shape in = input.shape();
    const int out_c = p.out_channels();
    const int k = p.kernel();
    const int stride = p.stride;
    const int pad = p.padding;
    const int out_h = (in.h + 2 * pad - k) / stride + 1;
    const int out_w = (in.w + 2 * pad - k) / stride + 1;
    const Shape out_shape{in.n, out_c, out_h, out_w};
    const int col_rows = in.c * k * k;
    const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
    const bool pointwise = (k == 1 && stride == 1 && pad == 0);

    std::vector<T> out(out_shape.numel());
    const T* x = input.data();
    const T* wt = p.weight.data();
    const T* b = p.bias.data();
    parallel_for(in.n, [&](int n) {
        std::vector<T> cols;
        const T* col_ptr = x + n * static_cast<std::size_t>(in.c) * in.plane();
        if (!pointwise) {
            cols.resize(static_cast<std::size_t>(col_rows) * out_plane);
            im2col(col_ptr, in.c, in.h, in.w, k, stride, pad, out_h, out_w, cols.data());
            col_ptr = cols.data();
        }
        MatMap<T> o(out.data() + n * static_cast<std::size_t>(out_c) * out_plane, out_c,
                    static_cast<Eigen::Index>(out_plane));
        o.noalias() = ConstMatMap<T>(wt, out_c, col_rows) *
                      ConstMatMap<T>(col_ptr, col_rows, static_cast<Eigen::Index>(out_plane));
        for (int oc = 0; oc < out_c; ++oc) o.row(oc).array() += b[oc];
    });

    return Tensor<T>::make_result(
        out_shape, std::move(out), "conv2d", {input, p.weight, p.bias},
        [in, out_c, k, stride, pad, out_h, out_w, col_rows, out_plane, pointwise](Node<T>& self) {
            Node<T>& xin = *self.inputs[0];
            Node<T>& wn = *self.inputs[1];
            Node<T>& bn = *self.inputs[2];
            const T* gout = self.grad.data();
            const std::size_t wsize = wn.value.size();
            const bool need_w = wn.requires_grad;
            const bool need_x = xin.requires_grad;
            std::vector<T> partial(need_w ? wsize * in.n : 0);
            parallel_for(in.n, [&](int n) {
                ConstMatMap<T> g(gout + n * static_cast<std::size_t>(out_c) * out_plane, out_c,
                                 static_cast<Eigen::Index>(out_plane));
                const T* img = xin.value.data() + n * static_cast<std::size_t>(in.c) * in.plane();
                if (need_w) {
                    std::vector<T> cols;
                    const T* col_ptr = img;
                    if (!pointwise) {
                        cols.resize(static_cast<std::size_t>(col_rows) * out_plane);
                        im2col(img, in.c, in.h, in.w, k, stride, pad, out_h, out_w, cols.data());
                        col_ptr = cols.data();
                    }
                    MatMap<T>(partial.data() + n * wsize, out_c, col_rows).noalias() =
                        g * ConstMatMap<T>(col_ptr, col_rows, static_cast<Eigen::Index>(out_plane))
                                .transpose();
                }
                if (need_x) {
                    T* gimg = xin.grad.data() + n * static_cast<std::size_t>(in.c) * in.plane();
                    ConstMatMap<T> wm(wn.value.data(), out_c, col_rows);
                    if (pointwise) {
                        MatMap<T>(gimg, col_rows, static_cast<Eigen::Index>(out_plane)).noalias() +=
                            wm.transpose() * g;
                    } else {
                        RowMat<T> gcol = wm.transpose() * g;
                        col2im(gcol.data(), in.c, in.h, in.w, k, stride, pad, out_h, out_w, gimg);
                    }
                }
            });
            if (need_w) {
                for (int n = 0; n < in.n; ++n)
                    for (std::size_t i = 0; i < wsize; ++i) wn.grad[i] += partial[n * wsize + i];
            }
            if (bn.requires_grad) {
                for (int n = 0; n < in.n; ++n)
                    for (int oc = 0; oc < out_c; ++oc) {
                        const T* g = gout + (static_cast<std::size_t>(n) * out_c + oc) * out_plane;
                        T acc = 0;
                        for (std::size_t i = 0; i < out_plane; ++i) acc += g[i];
                        bn.grad[oc] += acc;
                    }
            }
        });
}

template Tensor<float> conv2d(const Tensor<float>&, const ConvParams<float>&);
template Tensor<double> conv2d(const Tensor<double>&, const ConvParams<double>&);

}  // namespace dpanet
