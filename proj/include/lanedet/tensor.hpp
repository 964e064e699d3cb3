#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lanedet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {
struct TensorImpl;
}

// Dense row-major tensor of doubles. Copies are shallow handles onto the same
// storage; ops never mutate their inputs.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const;

    std::span<const double> data() const;
    // Writable view; only meant for leaves that are not yet on the tape.
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t flat_index) const { return data()[flat_index]; }

    bool requires_grad() const;
    Tensor& set_requires_grad(bool flag);

    bool has_grad() const;
    std::span<const double> grad() const;
    // Lazily allocated zero-initialized gradient buffer.
    std::span<double> grad_buffer() const;
    void clear_grad();

    // New leaf holding a copy of the values, without gradient history.
    Tensor detach() const;

    detail::TensorImpl* impl() const noexcept { return impl_.get(); }
    const std::shared_ptr<detail::TensorImpl>& shared_impl() const noexcept { return impl_; }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Ordered record of differentiable operations executed on this thread.
class Tape {
public:
    using BackwardFn = std::function<void(const Tensor& output)>;

    static Tape& current();

    void record(const Tensor& output, std::vector<Tensor> inputs, BackwardFn backward);
    // Seeds d(loss)/d(loss) = 1 and replays recorded rules in reverse, visiting
    // only records whose output feeds the loss.
    void backward(const Tensor& loss);
    void clear();
    std::size_t size() const noexcept { return records_.size(); }

private:
    struct Record {
        Tensor output;
        std::vector<Tensor> inputs;
        BackwardFn backward;
    };
    std::vector<Record> records_;
    std::uint64_t epoch_ = 0;
};

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// While a probe is alive on this thread, ops with data-dependent branches
// (ReLU, max reductions, nearest-lane selection, probability clamps) fold
// their decisions into a fingerprint. Equal fingerprints mean two
// evaluations took the same smooth piece of a piecewise function.
class BranchProbe {
public:
    BranchProbe();
    ~BranchProbe();
    BranchProbe(const BranchProbe&) = delete;
    BranchProbe& operator=(const BranchProbe&) = delete;

    std::uint64_t fingerprint() const { return hash_; }
    void note(std::uint64_t decision) { hash_ = (hash_ ^ decision) * 0x100000001b3ULL; }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
    BranchProbe* previous_;
};

// Active probe of this thread, or nullptr.
BranchProbe* active_branch_probe();

// Builds an op result and, when any input requires grad, records `backward`
// on the current tape. Used by the built-in ops and by fused loss kernels.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   Tape::BackwardFn backward);

void backward(const Tensor& loss);

}  // namespace lanedet
