#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lanedet/rng.hpp"
#include "lanedet/tensor.hpp"

namespace lanedet {

struct NamedParameter {
    std::string name;
    Tensor value;
};

// Ordered, named collection of learnable tensors. Order is the checkpoint
// record order.
class ParameterSet {
public:
    Tensor& add(std::string name, Tensor value);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::vector<NamedParameter>& items() { return items_; }
    const std::vector<NamedParameter>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    std::size_t total_elements() const;

    void clear_grads();
    // Deep copy with fresh storage.
    ParameterSet clone() const;

private:
    std::vector<NamedParameter> items_;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

// SGD with momentum: v <- m*v - lr*g, p <- p + v. Each step consumes the
// gradients and clears the tape.
class SgdOptimizer {
public:
    SgdOptimizer(double learning_rate, double momentum, double clip_norm = 0.0);

    void step(ParameterSet& params);

    double learning_rate() const { return learning_rate_; }
    void set_learning_rate(double lr) { learning_rate_ = lr; }
    // Gradient L2 norm seen by the last step, before clipping.
    double last_grad_norm() const { return last_grad_norm_; }

private:
    double learning_rate_;
    double momentum_;
    double clip_norm_;
    double last_grad_norm_ = 0.0;
    std::vector<std::vector<double>> velocity_;
};

}  // namespace lanedet
