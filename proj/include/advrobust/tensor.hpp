#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace advrobust {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for any argument whose extents do not fit the operation.
class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major array of doubles (NCHW for images).
///
/// Tensor is a reference-counted handle: copies alias the same storage,
/// like array handles in most autodiff frameworks. Use clone() for a deep
/// copy. A default-constructed Tensor is undefined (no storage).
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t i) const;
    std::size_t numel() const;

    std::span<double> data();
    std::span<const double> data() const;
    double& operator[](std::size_t i) { return data()[i]; }
    double operator[](std::size_t i) const { return data()[i]; }
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);

    bool has_grad() const;
    std::span<const double> grad() const;
    /// Grad buffer, allocated (zero-filled) on first access. Gradients are
    /// side data of the handle, so this is available through const handles
    /// (backward rules hold const copies of their inputs).
    std::span<double> grad_buffer() const;
    void zero_grad();
    void drop_grad() const;

    /// Deep copy of the values; the copy is a fresh leaf without grad.
    Tensor clone() const;
    /// Untaped copy with a new shape. Must preserve numel.
    Tensor reshaped(Shape shape) const;

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
};

/// Define-by-run gradient tape.
///
/// Operations append records in execution order, so the record list is
/// already topologically sorted. backward() walks it once in reverse.
class Tape {
  public:
    using BackwardFn = std::function<void()>;

    /// Appends a record. `fn` reads `output`'s grad and accumulates into the
    /// grads of whichever inputs require them.
    void record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn);

    /// True when an op on `inputs` should be recorded on `tape`.
    static bool should_record(const Tape* tape, std::initializer_list<const Tensor*> inputs);

    /// Populates grads of every requires_grad tensor reachable from `loss`.
    /// Leaf grads accumulate across calls; intermediate grads are reset.
    void backward(const Tensor& loss);

    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }
    void clear() noexcept { records_.clear(); }

    /// Number of record visits performed by the last backward() call.
    std::size_t last_backward_visits() const noexcept { return last_visits_; }

  private:
    struct Record {
        std::vector<Tensor> inputs;
        Tensor output;
        BackwardFn fn;
    };
    std::vector<Record> records_;
    std::size_t last_visits_ = 0;
};

}  // namespace advrobust
