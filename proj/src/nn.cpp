#include "lanedet/nn.hpp"

#include <algorithm>
#include <cmath>

#include "lanedet/errors.hpp"

namespace lanedet {

Tensor& ParameterSet::add(std::string name, Tensor value) {
    if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
    value.set_requires_grad(true);
    items_.push_back(NamedParameter{std::move(name), std::move(value)});
    return items_.back().value;
}

Tensor& ParameterSet::get(const std::string& name) {
    for (auto& p : items_)
        if (p.name == name) return p.value;
    throw ContractError("unknown parameter '" + name + "'");
}

const Tensor& ParameterSet::get(const std::string& name) const {
    for (const auto& p : items_)
        if (p.name == name) return p.value;
    throw ContractError("unknown parameter '" + name + "'");
}

bool ParameterSet::contains(const std::string& name) const {
    return std::any_of(items_.begin(), items_.end(), [&](const NamedParameter& p) { return p.name == name; });
}

std::size_t ParameterSet::total_elements() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.value.size();
    return n;
}

void ParameterSet::clear_grads() {
    for (auto& p : items_) p.value.clear_grad();
}

ParameterSet ParameterSet::clone() const {
    ParameterSet copy;
    for (const auto& p : items_) copy.add(p.name, p.value.detach());
    return copy;
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-limit, limit);
    return Tensor(std::move(shape), std::move(v));
}

SgdOptimizer::SgdOptimizer(double learning_rate, double momentum, double clip_norm)
    : learning_rate_(learning_rate), momentum_(momentum), clip_norm_(clip_norm) {}

void SgdOptimizer::step(ParameterSet& params) {
    auto& items = params.items();
    if (velocity_.size() != items.size()) {
        velocity_.clear();
        for (const auto& p : items) velocity_.emplace_back(p.value.size(), 0.0);
    }
    double sq = 0.0;
    for (const auto& p : items)
        if (p.value.has_grad())
            for (double g : p.value.grad()) sq += g * g;
    last_grad_norm_ = std::sqrt(sq);
    const double factor =
        (clip_norm_ > 0.0 && last_grad_norm_ > clip_norm_) ? clip_norm_ / last_grad_norm_ : 1.0;

    for (std::size_t i = 0; i < items.size(); ++i) {
        auto& param = items[i].value;
        auto& v = velocity_[i];
        if (v.size() != param.size()) throw DimensionError("optimizer state does not match parameter '" + items[i].name + "'");
        auto values = param.mutable_data();
        if (param.has_grad()) {
            const auto g = param.grad();
            for (std::size_t j = 0; j < v.size(); ++j) v[j] = momentum_ * v[j] - learning_rate_ * (g[j] * factor);
        } else {
            for (std::size_t j = 0; j < v.size(); ++j) v[j] = momentum_ * v[j];
        }
        for (std::size_t j = 0; j < v.size(); ++j) values[j] += v[j];
        param.clear_grad();
    }
    Tape::current().clear();
}

}  // namespace lanedet
