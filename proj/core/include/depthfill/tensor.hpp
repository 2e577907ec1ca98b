#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace depthfill {

/// Dense 4-D shape in (batch, channel, height, width) order.
struct Shape4 {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
               static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    bool operator==(const Shape4&) const = default;
    std::string str() const;
};

/// Throws std::invalid_argument with the given message. Used by ops to
/// reject shape mismatches with the offending dims spelled out.
[[noreturn]] void fail(const std::string& message);

/// Runtime toggle for NaN/Inf scanning at op boundaries. Defaults to on in
/// debug builds and off in release; tests turn it on explicitly.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

/// Dense float32 tensor with an optional gradient buffer. Copying a Tensor
/// copies the handle; the storage is shared, and like other shared-handle
/// tensor types constness is shallow: data()/grad() return mutable pointers.
/// Data is immutable by convention once an op has consumed the tensor; grad
/// buffers are the only state written during backward.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape4 shape, bool requires_grad = false);
    static Tensor full(Shape4 shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape4 shape, std::vector<float> data, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape4& shape() const;
    int n() const { return shape().n; }
    int c() const { return shape().c; }
    int h() const { return shape().h; }
    int w() const { return shape().w; }
    std::size_t numel() const { return shape().numel(); }

    float* data() const;
    std::span<float> values() const;

    bool requires_grad() const;
    /// Enables gradient tracking; allocates a zero grad buffer.
    void set_requires_grad(bool requires_grad);
    /// Mutable gradient pointer; null when grads are not tracked.
    float* grad() const;
    void zero_grad();

    float& at(int n, int c, int y, int x) const;

    /// Value of a single-element tensor.
    float item() const;

    /// Scans for NaN/Inf and throws if found (only when finite checks are on).
    void check_finite(const char* op_name) const;

    /// Stable identity of the underlying storage.
    const void* id() const { return impl_.get(); }

private:
    struct Impl {
        Shape4 shape;
        std::vector<float> data;
        std::vector<float> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;

    std::size_t offset(int n, int c, int y, int x) const;
};

/// Reverse-mode tape. Ops append backward closures in execution order during
/// the forward pass, so running them in reverse is a valid topological
/// traversal. A tape belongs to one logical thread and one forward pass.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_step);

    /// Seeds loss.grad with 1 and runs all recorded steps in reverse order.
    /// The loss must be a scalar produced by taped ops. A second call
    /// without reset() is rejected.
    void backward(const Tensor& loss);

    std::size_t size() const { return steps_.size(); }
    bool consumed() const { return consumed_; }

    /// Drops all recorded steps (and the tensors they captured).
    void reset();

private:
    std::vector<std::function<void()>> steps_;
    bool consumed_ = false;
};

}  // namespace depthfill
