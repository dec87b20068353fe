#pragma once

#include "stereoscale/grid.hpp"
#include "stereoscale/model.hpp"

#include <cstddef>
#include <new>
#include <span>
#include <vector>

namespace stereoscale
{
// Vectorized kernels split sums differently depending on where a buffer starts, so every
// network buffer starts on a 64-byte boundary to keep results independent of the allocator.
template <typename T>
struct AlignedAllocator
{
        using value_type = T;
        static constexpr std::align_val_t kAlignment{64};

        AlignedAllocator() = default;
        template <typename U>
        AlignedAllocator(const AlignedAllocator<U>&) noexcept
        {
        }

        T* allocate(std::size_t n)
        {
                return static_cast<T*>(::operator new(n * sizeof(T), kAlignment));
        }

        void deallocate(T* p, std::size_t) noexcept
        {
                ::operator delete(p, kAlignment);
        }

        template <typename U>
        bool operator==(const AlignedAllocator<U>&) const noexcept
        {
                return true;
        }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

// Network input planes [2, H, W]: disparity / disparity_scale * mask, then mask.
template <typename T>
struct ModelInput
{
        int width = 0;
        int height = 0;
        Buffer<T> planes;
};

template <typename T>
ModelInput<T> prepare_input(const Grid<float>& disparity, const Grid<float>& mask, const ModelConfig& cfg);

template <typename T>
ModelInput<T> prepare_input(const Sample& sample, const ModelConfig& cfg)
{
        return prepare_input<T>(sample.disparity, sample.mask, cfg);
}

// One value vector per tensor, in parameter_layout order.
template <typename T>
using ParamVectors = std::vector<Buffer<T>>;

template <typename T>
class Network
{
public:
        // Activations kept from forward for backward.
        struct Workspace
        {
                const ModelInput<T>* input = nullptr;
                std::vector<Buffer<T>> outputs; // per layer
                Buffer<T> cell_weights;         // mask weight of each final-grid cell
                T weight_sum = 0;
                Buffer<T> pooled;
                Buffer<T> grad_a;
                Buffer<T> grad_b;
                Buffer<T> cols;
                Buffer<T> grad_cols;
        };

        Network(const ModelConfig& cfg, const ModelParams& params);

        const ModelConfig& config() const
        {
                return cfg_;
        }

        ParamVectors<T>& parameters()
        {
                return params_;
        }
        const ParamVectors<T>& parameters() const
        {
                return params_;
        }

        ParamVectors<T> zero_gradients() const;

        // Predicted diopters. Pure.
        T predict(const ModelInput<T>& input) const;

        // Predicted diopters; fills `ws` for a following backward call. Throws NumericalError
        // naming the first layer with a non-finite activation.
        T forward(const ModelInput<T>& input, Workspace& ws) const;

        // Adds d(output)/d(params) * grad_output into `grads`.
        void backward(T grad_output, Workspace& ws, ParamVectors<T>& grads) const;

        // Copies parameters back into named float tensors.
        void store(ModelParams& params) const;

private:
        struct Shape
        {
                int channels;
                int height;
                int width;
        };

        void conv_forward(std::size_t layer, const T* in, const Shape& in_shape, T* out, Workspace& ws) const;
        void conv_backward(std::size_t layer, const T* in, const Shape& in_shape, const T* out, T* grad_out,
                           T* grad_in, ParamVectors<T>& grads, Workspace& ws) const;
        void im2col(const T* in, const Shape& in_shape, const LayerSpec& l, int row0, int rows, T* cols) const;
        void col2im(const T* cols, const Shape& in_shape, const LayerSpec& l, int row0, int rows, T* grad_in) const;
        void locate_non_finite(const Workspace& ws) const;

        ModelConfig cfg_;
        std::vector<Shape> shapes_;     // shapes_[0] is the input; shapes_[i + 1] follows layer i
        std::vector<int> conv_index_;   // tensor pair index per layer, -1 for pooling
        int total_stride_ = 1;
        ParamVectors<T> params_;
};

// Mean squared error in diopters over `inputs`; gradients are accumulated into `grads` in
// input order. Returns the mean loss.
template <typename T>
T batch_loss(const Network<T>& net, std::span<const ModelInput<T>* const> inputs, std::span<const T> targets,
             ParamVectors<T>& grads);

extern template class Network<float>;
extern template class Network<double>;
}
