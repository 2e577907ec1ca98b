#include "depthfill/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace depthfill {

namespace {
#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif
}  // namespace

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

std::string Shape4::str() const {
    std::ostringstream os;
    os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
    return os.str();
}

void fail(const std::string& message) { throw std::invalid_argument(message); }

Tensor Tensor::zeros(Shape4 shape, bool requires_grad) {
    return full(shape, 0.0f, requires_grad);
}

Tensor Tensor::full(Shape4 shape, float value, bool requires_grad) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        fail("tensor: negative dimension in shape " + shape.str());
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = shape;
    t.impl_->data.assign(shape.numel(), value);
    if (requires_grad) {
        t.impl_->requires_grad = true;
        t.impl_->grad.assign(shape.numel(), 0.0f);
    }
    return t;
}

Tensor Tensor::from_data(Shape4 shape, std::vector<float> data, bool requires_grad) {
    if (data.size() != shape.numel()) {
        fail("tensor: data length " + std::to_string(data.size()) +
             " does not match shape " + shape.str());
    }
    Tensor t = zeros({0, 0, 0, 0});
    t.impl_->shape = shape;
    t.impl_->data = std::move(data);
    if (requires_grad) {
        t.impl_->requires_grad = true;
        t.impl_->grad.assign(shape.numel(), 0.0f);
    }
    return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return full({1, 1, 1, 1}, value, requires_grad);
}

const Shape4& Tensor::shape() const {
    if (!impl_) fail("tensor: use of undefined tensor");
    return impl_->shape;
}

float* Tensor::data() const {
    if (!impl_) fail("tensor: use of undefined tensor");
    return impl_->data.data();
}

std::span<float> Tensor::values() const {
    return {data(), numel()};
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool requires_grad) {
    if (!impl_) fail("tensor: use of undefined tensor");
    impl_->requires_grad = requires_grad;
    if (requires_grad && impl_->grad.size() != impl_->data.size()) {
        impl_->grad.assign(impl_->data.size(), 0.0f);
    }
}

float* Tensor::grad() const {
    if (!impl_ || !impl_->requires_grad) return nullptr;
    return impl_->grad.data();
}

void Tensor::zero_grad() {
    if (impl_ && impl_->requires_grad) {
        std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
    }
}

std::size_t Tensor::offset(int n, int c, int y, int x) const {
    const Shape4& s = shape();
    return ((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x;
}

float& Tensor::at(int n, int c, int y, int x) const { return data()[offset(n, c, y, x)]; }

float Tensor::item() const {
    if (numel() != 1) {
        fail("tensor: item() on non-scalar of shape " + shape().str());
    }
    return data()[0];
}

void Tensor::check_finite(const char* op_name) const {
    if (!finite_checks_enabled() || !impl_) return;
    for (float v : impl_->data) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string(op_name) +
                                     ": non-finite value in tensor of shape " + shape().str());
        }
    }
}

void Tape::record(std::function<void()> backward_step) {
    steps_.push_back(std::move(backward_step));
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) {
        throw std::runtime_error("tape: backward called twice without reset");
    }
    if (!loss.defined() || loss.numel() != 1) {
        throw std::invalid_argument("tape: backward requires a scalar loss");
    }
    if (!loss.requires_grad() || steps_.empty()) {
        throw std::invalid_argument("tape: loss does not participate in this tape");
    }
    consumed_ = true;
    Tensor seed = loss;
    seed.grad()[0] += 1.0f;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
        (*it)();
    }
}

void Tape::reset() {
    steps_.clear();
    consumed_ = false;
}

}  // namespace depthfill
