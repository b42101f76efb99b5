#include "advrobust/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace advrobust {

struct Tensor::Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
};

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<Impl>()) {
    for (auto extent : shape)
        if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    impl_->values.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<Impl>()) {
    for (auto extent : shape)
        if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != values.size())
        throw ShapeError("shape " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
                         " values");
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t i) const {
    if (i >= impl_->shape.size())
        throw ShapeError("dimension " + std::to_string(i) + " out of range for " + shape_str(impl_->shape));
    return impl_->shape[i];
}

std::size_t Tensor::numel() const { return impl_->values.size(); }

std::span<double> Tensor::data() { return impl_->values; }
std::span<const double> Tensor::data() const { return impl_->values; }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_str(shape()));
    return impl_->values[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { impl_->requires_grad = flag; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::grad_buffer() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::drop_grad() const {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
}

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->values); }

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
        throw ShapeError("cannot reshape " + shape_str(impl_->shape) + " to " + shape_str(shape));
    auto impl = std::make_shared<Impl>(*impl_);
    impl->shape = std::move(shape);
    impl->grad.clear();
    return Tensor(std::move(impl));
}

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn) {
    output.set_requires_grad(true);
    records_.push_back(Record{std::move(inputs), std::move(output), std::move(fn)});
}

bool Tape::should_record(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
    if (tape == nullptr) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t != nullptr && t->defined() && t->requires_grad(); });
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ShapeError("backward() needs a scalar loss, got " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("undefined tensor")));
    for (auto& r : records_) r.output.drop_grad();
    Tensor seed = loss;
    seed.grad_buffer()[0] += 1.0;
    last_visits_ = 0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        if (!it->output.has_grad()) continue;
        it->fn();
        ++last_visits_;
    }
}

}  // namespace advrobust
