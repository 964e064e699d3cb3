#include "lanedet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lanedet/errors.hpp"

namespace lanedet {

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::uint64_t visit_epoch = 0;
};

}  // namespace detail

namespace {

thread_local bool t_grad_enabled = true;
thread_local BranchProbe* t_probe = nullptr;

#ifndef NDEBUG
bool all_finite(std::span<const double> values) {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}
#endif

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto extent : shape) n *= extent;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
    const auto n = shape_numel(shape);
    impl_->shape = std::move(shape);
    impl_->data.assign(n, fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<detail::TensorImpl>()) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_to_string(shape) + " holds " +
                             std::to_string(shape_numel(shape)) + " elements but " +
                             std::to_string(values.size()) + " values were given");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= impl_->shape.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_to_string(impl_->shape));
    }
    return impl_->shape[axis];
}

std::size_t Tensor::size() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }

std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
    if (impl_->data.size() != 1) {
        throw ContractError("item() on tensor of shape " + shape_to_string(impl_->shape));
    }
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::grad_buffer() const {
    if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

void Tensor::clear_grad() {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data); }

Tape& Tape::current() {
    thread_local Tape tape;
    return tape;
}

void Tape::record(const Tensor& output, std::vector<Tensor> inputs, BackwardFn backward) {
    records_.push_back(Record{output, std::move(inputs), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " +
                            (loss.defined() ? shape_to_string(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward() on a loss that is not connected to any parameter");
    }
    const std::uint64_t epoch = ++epoch_;
    loss.grad_buffer()[0] += 1.0;
    loss.impl()->visit_epoch = epoch;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        if (it->output.impl()->visit_epoch != epoch) continue;
        it->output.grad_buffer();
        it->backward(it->output);
        for (auto& input : it->inputs) {
            if (input.requires_grad()) input.impl()->visit_epoch = epoch;
        }
    }
}

void Tape::clear() { records_.clear(); }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

BranchProbe::BranchProbe() : previous_(t_probe) { t_probe = this; }

BranchProbe::~BranchProbe() { t_probe = previous_; }

BranchProbe* active_branch_probe() { return t_probe; }

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   Tape::BackwardFn backward) {
    Tensor out(std::move(shape), std::move(values));
#ifndef NDEBUG
    if (!all_finite(out.data())) {
        const bool finite_inputs = std::all_of(inputs.begin(), inputs.end(),
                                               [](const Tensor& t) { return all_finite(t.data()); });
        if (finite_inputs) throw ContractError("non-finite value produced from finite inputs");
    }
#endif
    if (!t_grad_enabled) return out;
    const bool needs_grad =
        std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (!needs_grad) return out;
    out.set_requires_grad(true);
    Tape::current().record(out, std::move(inputs), std::move(backward));
    return out;
}

void backward(const Tensor& loss) { Tape::current().backward(loss); }

}  // namespace lanedet
