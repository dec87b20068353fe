#include "stereoscale/network.hpp"

#include "stereoscale/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace stereoscale
{
namespace
{
// Upper bound on im2col elements per chunk; keeps the 1024-wide model within memory.
constexpr std::size_t kMaxColElements = std::size_t{1} << 22;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using VectorMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVectorMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
bool all_finite(const Buffer<T>& v)
{
        return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

int chunk_rows(std::size_t col_rows, int out_width, int out_height)
{
        const std::size_t per_row = col_rows * static_cast<std::size_t>(out_width);
        return static_cast<int>(std::clamp<std::size_t>(kMaxColElements / per_row, 1, out_height));
}
}

template <typename T>
ModelInput<T> prepare_input(const Grid<float>& disparity, const Grid<float>& mask, const ModelConfig& cfg)
{
        if (disparity.width() != cfg.width || disparity.height() != cfg.height || mask.width() != cfg.width ||
            mask.height() != cfg.height)
        {
                throw InputError("sample is " + std::to_string(disparity.width()) + "x" +
                                 std::to_string(disparity.height()) + ", model expects " + std::to_string(cfg.width) +
                                 "x" + std::to_string(cfg.height));
        }
        ModelInput<T> in;
        in.width = cfg.width;
        in.height = cfg.height;
        const std::size_t n = disparity.size();
        in.planes.resize(2 * n);
        const auto d = disparity.values();
        const auto m = mask.values();
        const T inv_scale = static_cast<T>(1.0 / cfg.disparity_scale);
        for (std::size_t i = 0; i < n; ++i)
        {
                in.planes[i] = static_cast<T>(d[i]) * inv_scale * static_cast<T>(m[i]);
                in.planes[n + i] = static_cast<T>(m[i]);
        }
        return in;
}

template ModelInput<float> prepare_input<float>(const Grid<float>&, const Grid<float>&, const ModelConfig&);
template ModelInput<double> prepare_input<double>(const Grid<float>&, const Grid<float>&, const ModelConfig&);

template <typename T>
Network<T>::Network(const ModelConfig& cfg, const ModelParams& params) : cfg_(cfg)
{
        validate(cfg);
        check_shapes(params, cfg);
        shapes_.push_back({2, cfg.height, cfg.width});
        int conv = 0;
        for (const LayerSpec& l : cfg.layers)
        {
                Shape s = shapes_.back();
                if (l.kind == LayerKind::Conv)
                {
                        s.channels = cfg.stage_channels[l.stage];
                        s.height = (s.height - 1) / l.stride + 1;
                        s.width = (s.width - 1) / l.stride + 1;
                        conv_index_.push_back(conv++);
                }
                else
                {
                        s.height /= l.stride;
                        s.width /= l.stride;
                        conv_index_.push_back(-1);
                }
                if (s.height < 1 || s.width < 1)
                {
                        throw ConfigError("feature map vanishes at " + std::to_string(cfg.width) + "x" +
                                          std::to_string(cfg.height));
                }
                total_stride_ *= l.stride;
                shapes_.push_back(s);
        }
        for (const auto& t : params.tensors)
        {
                params_.emplace_back(t.values.begin(), t.values.end());
        }
}

template <typename T>
ParamVectors<T> Network<T>::zero_gradients() const
{
        ParamVectors<T> g;
        for (const auto& p : params_)
        {
                g.emplace_back(p.size(), T(0));
        }
        return g;
}

template <typename T>
void Network<T>::store(ModelParams& params) const
{
        check_shapes(params, cfg_);
        for (std::size_t i = 0; i < params_.size(); ++i)
        {
                std::transform(params_[i].begin(), params_[i].end(), params.tensors[i].values.begin(),
                               [](T x) { return static_cast<float>(x); });
        }
}

template <typename T>
void Network<T>::im2col(const T* in, const Shape& s, const LayerSpec& l, int row0, int rows, T* cols) const
{
        const int k = l.kernel;
        const int pad = k / 2;
        const int ow = (s.width - 1) / l.stride + 1;
        const std::size_t n = static_cast<std::size_t>(rows) * ow;
        T* dst = cols;
        for (int c = 0; c < s.channels; ++c)
        {
                const T* plane = in + static_cast<std::size_t>(c) * s.height * s.width;
                for (int ky = 0; ky < k; ++ky)
                {
                        for (int kx = 0; kx < k; ++kx, dst += n)
                        {
                                for (int oy = 0; oy < rows; ++oy)
                                {
                                        const int y = (row0 + oy) * l.stride + ky - pad;
                                        T* out = dst + static_cast<std::size_t>(oy) * ow;
                                        if (y < 0 || y >= s.height)
                                        {
                                                std::fill(out, out + ow, T(0));
                                                continue;
                                        }
                                        const T* src = plane + static_cast<std::size_t>(y) * s.width;
                                        for (int ox = 0; ox < ow; ++ox)
                                        {
                                                const int x = ox * l.stride + kx - pad;
                                                out[ox] = (x >= 0 && x < s.width) ? src[x] : T(0);
                                        }
                                }
                        }
                }
        }
}

template <typename T>
void Network<T>::col2im(const T* cols, const Shape& s, const LayerSpec& l, int row0, int rows, T* grad_in) const
{
        const int k = l.kernel;
        const int pad = k / 2;
        const int ow = (s.width - 1) / l.stride + 1;
        const std::size_t n = static_cast<std::size_t>(rows) * ow;
        const T* src = cols;
        for (int c = 0; c < s.channels; ++c)
        {
                T* plane = grad_in + static_cast<std::size_t>(c) * s.height * s.width;
                for (int ky = 0; ky < k; ++ky)
                {
                        for (int kx = 0; kx < k; ++kx, src += n)
                        {
                                for (int oy = 0; oy < rows; ++oy)
                                {
                                        const int y = (row0 + oy) * l.stride + ky - pad;
                                        if (y < 0 || y >= s.height)
                                        {
                                                continue;
                                        }
                                        const T* g = src + static_cast<std::size_t>(oy) * ow;
                                        T* dst = plane + static_cast<std::size_t>(y) * s.width;
                                        for (int ox = 0; ox < ow; ++ox)
                                        {
                                                const int x = ox * l.stride + kx - pad;
                                                if (x >= 0 && x < s.width)
                                                {
                                                        dst[x] += g[ox];
                                                }
                                        }
                                }
                        }
                }
        }
}

template <typename T>
void Network<T>::conv_forward(std::size_t layer, const T* in, const Shape& s, T* out, Workspace& ws) const
{
        const LayerSpec& l = cfg_.layers[layer];
        const Shape& o = shapes_[layer + 1];
        const int ci = conv_index_[layer];
        const auto& weight = params_[2 * ci];
        const auto& bias = params_[2 * ci + 1];
        const std::size_t col_rows = static_cast<std::size_t>(s.channels) * l.kernel * l.kernel;
        const std::size_t plane = static_cast<std::size_t>(o.height) * o.width;
        const int step = chunk_rows(col_rows, o.width, o.height);
        ConstMatrixMap<T> w(weight.data(), o.channels, static_cast<Eigen::Index>(col_rows));
        for (int row0 = 0; row0 < o.height; row0 += step)
        {
                const int rows = std::min(step, o.height - row0);
                const std::size_t n = static_cast<std::size_t>(rows) * o.width;
                ws.cols.resize(col_rows * n);
                im2col(in, s, l, row0, rows, ws.cols.data());
                ConstMatrixMap<T> cols(ws.cols.data(), static_cast<Eigen::Index>(col_rows), static_cast<Eigen::Index>(n));
                // Output chunk is a strided block of the [O, H*W] activation.
                Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>> dst(
                        out + static_cast<std::size_t>(row0) * o.width, o.channels, static_cast<Eigen::Index>(n),
                        Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
                dst.noalias() = w * cols;
                for (int c = 0; c < o.channels; ++c)
                {
                        dst.row(c) = (dst.row(c).array() + bias[c]).cwiseMax(T(0));
                }
        }
}

template <typename T>
void Network<T>::conv_backward(std::size_t layer, const T* in, const Shape& s, const T* out, T* grad_out, T* grad_in,
                               ParamVectors<T>& grads, Workspace& ws) const
{
        const LayerSpec& l = cfg_.layers[layer];
        const Shape& o = shapes_[layer + 1];
        const int ci = conv_index_[layer];
        const auto& weight = params_[2 * ci];
        auto& grad_weight = grads[2 * ci];
        auto& grad_bias = grads[2 * ci + 1];
        const std::size_t col_rows = static_cast<std::size_t>(s.channels) * l.kernel * l.kernel;
        const std::size_t plane = static_cast<std::size_t>(o.height) * o.width;

        // ReLU: zero the gradient where the unit was inactive.
        for (std::size_t i = 0; i < plane * o.channels; ++i)
        {
                if (!(out[i] > T(0)))
                {
                        grad_out[i] = T(0);
                }
        }
        ConstMatrixMap<T> g_full(grad_out, o.channels, static_cast<Eigen::Index>(plane));
        VectorMap<T>(grad_bias.data(), o.channels) += g_full.rowwise().sum();

        ConstMatrixMap<T> w(weight.data(), o.channels, static_cast<Eigen::Index>(col_rows));
        MatrixMap<T> gw(grad_weight.data(), o.channels, static_cast<Eigen::Index>(col_rows));
        const int step = chunk_rows(col_rows, o.width, o.height);
        for (int row0 = 0; row0 < o.height; row0 += step)
        {
                const int rows = std::min(step, o.height - row0);
                const std::size_t n = static_cast<std::size_t>(rows) * o.width;
                ws.cols.resize(col_rows * n);
                im2col(in, s, l, row0, rows, ws.cols.data());
                ConstMatrixMap<T> cols(ws.cols.data(), static_cast<Eigen::Index>(col_rows), static_cast<Eigen::Index>(n));
                Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>> g(
                        grad_out + static_cast<std::size_t>(row0) * o.width, o.channels, static_cast<Eigen::Index>(n),
                        Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
                gw.noalias() += g * cols.transpose();
                if (grad_in != nullptr)
                {
                        ws.grad_cols.resize(col_rows * n);
                        MatrixMap<T> gc(ws.grad_cols.data(), static_cast<Eigen::Index>(col_rows),
                                        static_cast<Eigen::Index>(n));
                        gc.noalias() = w.transpose() * g;
                        col2im(ws.grad_cols.data(), s, l, row0, rows, grad_in);
                }
        }
}

template <typename T>
T Network<T>::forward(const ModelInput<T>& input, Workspace& ws) const
{
        if (input.width != cfg_.width || input.height != cfg_.height ||
            input.planes.size() != 2 * static_cast<std::size_t>(cfg_.width) * cfg_.height)
        {
                throw InputError("input is " + std::to_string(input.width) + "x" + std::to_string(input.height) +
                                 ", model expects " + std::to_string(cfg_.width) + "x" + std::to_string(cfg_.height));
        }
        ws.input = &input;
        ws.outputs.resize(cfg_.layers.size());
        const T* in = input.planes.data();
        for (std::size_t i = 0; i < cfg_.layers.size(); ++i)
        {
                const Shape& s = shapes_[i];
                const Shape& o = shapes_[i + 1];
                auto& out = ws.outputs[i];
                out.resize(static_cast<std::size_t>(o.channels) * o.height * o.width);
                const LayerSpec& l = cfg_.layers[i];
                if (l.kind == LayerKind::Conv)
                {
                        conv_forward(i, in, s, out.data(), ws);
                }
                else
                {
                        const T scale = T(1) / static_cast<T>(l.stride * l.stride);
                        for (int c = 0; c < o.channels; ++c)
                        {
                                const T* src = in + static_cast<std::size_t>(c) * s.height * s.width;
                                T* dst = out.data() + static_cast<std::size_t>(c) * o.height * o.width;
                                for (int oy = 0; oy < o.height; ++oy)
                                {
                                        for (int ox = 0; ox < o.width; ++ox)
                                        {
                                                T acc = 0;
                                                for (int dy = 0; dy < l.stride; ++dy)
                                                {
                                                        const T* row = src +
                                                                       static_cast<std::size_t>(oy * l.stride + dy) * s.width +
                                                                       ox * l.stride;
                                                        for (int dx = 0; dx < l.stride; ++dx)
                                                        {
                                                                acc += row[dx];
                                                        }
                                                }
                                                dst[static_cast<std::size_t>(oy) * o.width + ox] = acc * scale;
                                        }
                                }
                        }
                }
                in = out.data();
        }

        // Masked mean over the final grid; each cell is weighted by the fraction of masked-in input
        // pixels in the block it covers.
        const Shape& f = shapes_.back();
        const T* mask = input.planes.data() + static_cast<std::size_t>(cfg_.width) * cfg_.height;
        ws.cell_weights.assign(static_cast<std::size_t>(f.height) * f.width, T(0));
        ws.weight_sum = 0;
        for (int cy = 0; cy < f.height; ++cy)
        {
                const int y0 = cy * total_stride_;
                const int y1 = std::min(y0 + total_stride_, cfg_.height);
                for (int cx = 0; cx < f.width; ++cx)
                {
                        const int x0 = cx * total_stride_;
                        const int x1 = std::min(x0 + total_stride_, cfg_.width);
                        T acc = 0;
                        for (int y = y0; y < y1; ++y)
                        {
                                for (int x = x0; x < x1; ++x)
                                {
                                        acc += mask[static_cast<std::size_t>(y) * cfg_.width + x];
                                }
                        }
                        const T cell = acc / static_cast<T>(total_stride_ * total_stride_);
                        ws.cell_weights[static_cast<std::size_t>(cy) * f.width + cx] = cell;
                        ws.weight_sum += cell;
                }
        }
        if (!(ws.weight_sum > T(0)))
        {
                throw DataError("input has no masked-in pixels");
        }
        const std::size_t cells = ws.cell_weights.size();
        ConstMatrixMap<T> features(ws.outputs.back().data(), f.channels, static_cast<Eigen::Index>(cells));
        ConstVectorMap<T> weights(ws.cell_weights.data(), static_cast<Eigen::Index>(cells));
        ws.pooled.resize(f.channels);
        VectorMap<T> pooled(ws.pooled.data(), f.channels);
        pooled.noalias() = features * weights;
        pooled /= ws.weight_sum;

        const auto& head_w = params_[params_.size() - 2];
        const T head_b = params_.back()[0];
        T y = head_b;
        for (int c = 0; c < f.channels; ++c)
        {
                y += head_w[c] * ws.pooled[c];
        }
        if (!std::isfinite(y))
        {
                locate_non_finite(ws);
        }
        return y;
}

template <typename T>
void Network<T>::locate_non_finite(const Workspace& ws) const
{
        for (std::size_t i = 0; i < ws.outputs.size(); ++i)
        {
                if (!all_finite(ws.outputs[i]))
                {
                        throw NumericalError("non-finite activation at layer " + std::to_string(i) + " (" +
                                             describe_layers({cfg_.layers[i]}) + ")");
                }
        }
        throw NumericalError("non-finite activation at layer " + std::to_string(ws.outputs.size()) + " (head)");
}

template <typename T>
T Network<T>::predict(const ModelInput<T>& input) const
{
        Workspace ws;
        return forward(input, ws);
}

template <typename T>
void Network<T>::backward(T grad_output, Workspace& ws, ParamVectors<T>& grads) const
{
        const Shape& f = shapes_.back();
        const std::size_t cells = ws.cell_weights.size();
        auto& grad_head_w = grads[grads.size() - 2];
        const auto& head_w = params_[params_.size() - 2];
        grads.back()[0] += grad_output;
        for (int c = 0; c < f.channels; ++c)
        {
                grad_head_w[c] += grad_output * ws.pooled[c];
        }

        ws.grad_a.assign(static_cast<std::size_t>(f.channels) * cells, T(0));
        for (int c = 0; c < f.channels; ++c)
        {
                const T g = grad_output * head_w[c] / ws.weight_sum;
                T* dst = ws.grad_a.data() + static_cast<std::size_t>(c) * cells;
                for (std::size_t i = 0; i < cells; ++i)
                {
                        dst[i] = g * ws.cell_weights[i];
                }
        }

        for (std::size_t i = cfg_.layers.size(); i-- > 0;)
        {
                const Shape& s = shapes_[i];
                const Shape& o = shapes_[i + 1];
                const LayerSpec& l = cfg_.layers[i];
                const T* in = i == 0 ? ws.input->planes.data() : ws.outputs[i - 1].data();
                T* grad_in = nullptr;
                if (i > 0)
                {
                        ws.grad_b.assign(static_cast<std::size_t>(s.channels) * s.height * s.width, T(0));
                        grad_in = ws.grad_b.data();
                }
                if (l.kind == LayerKind::Conv)
                {
                        conv_backward(i, in, s, ws.outputs[i].data(), ws.grad_a.data(), grad_in, grads, ws);
                }
                else
                {
                        const T scale = T(1) / static_cast<T>(l.stride * l.stride);
                        for (int c = 0; c < o.channels; ++c)
                        {
                                const T* g = ws.grad_a.data() + static_cast<std::size_t>(c) * o.height * o.width;
                                T* dst = grad_in + static_cast<std::size_t>(c) * s.height * s.width;
                                for (int oy = 0; oy < o.height; ++oy)
                                {
                                        for (int ox = 0; ox < o.width; ++ox)
                                        {
                                                const T v = g[static_cast<std::size_t>(oy) * o.width + ox] * scale;
                                                for (int dy = 0; dy < l.stride; ++dy)
                                                {
                                                        T* row = dst +
                                                                 static_cast<std::size_t>(oy * l.stride + dy) * s.width +
                                                                 ox * l.stride;
                                                        for (int dx = 0; dx < l.stride; ++dx)
                                                        {
                                                                row[dx] += v;
                                                        }
                                                }
                                        }
                                }
                        }
                }
                std::swap(ws.grad_a, ws.grad_b);
        }
}

template <typename T>
T batch_loss(const Network<T>& net, std::span<const ModelInput<T>* const> inputs, std::span<const T> targets,
             ParamVectors<T>& grads)
{
        if (inputs.empty() || inputs.size() != targets.size())
        {
                throw InputError("batch needs matching, non-empty inputs and targets");
        }
        typename Network<T>::Workspace ws;
        const T inv_n = T(1) / static_cast<T>(inputs.size());
        T loss = 0;
        for (std::size_t i = 0; i < inputs.size(); ++i)
        {
                const T err = net.forward(*inputs[i], ws) - targets[i];
                loss += err * err * inv_n;
                net.backward(T(2) * err * inv_n, ws, grads);
        }
        return loss;
}

template class Network<float>;
template class Network<double>;
template float batch_loss<float>(const Network<float>&, std::span<const ModelInput<float>* const>,
                                 std::span<const float>, ParamVectors<float>&);
template double batch_loss<double>(const Network<double>&, std::span<const ModelInput<double>* const>,
                                   std::span<const double>, ParamVectors<double>&);
}
