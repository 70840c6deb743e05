#pragma once

#include "psfv/nn/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>

namespace psfv::nn {

/// Trainable tensor with its gradient accumulator and Adam moments.
template <class Scalar>
struct Parameter
{
    std::string name;
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    Tensor<Scalar> adam_m;
    Tensor<Scalar> adam_v;
    std::int64_t step_count = 0;

    Parameter() = default;
    Parameter(std::string n, Tensor<Scalar> v)
        : name(std::move(n)), value(std::move(v)), grad(value.shape()), adam_m(value.shape()), adam_v(value.shape())
    {}

    void zero_grad() { grad.set_zero(); }
};

/// Ordered, address-stable parameter collection.
template <class Scalar>
class ParameterSet
{
public:
    Parameter<Scalar>& add(std::string name, Tensor<Scalar> value)
    {
        return params_.emplace_back(std::move(name), std::move(value));
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    std::size_t size() const { return params_.size(); }

    Parameter<Scalar>& operator[](std::size_t i) { return params_[i]; }
    const Parameter<Scalar>& operator[](std::size_t i) const { return params_[i]; }

    Index scalar_count() const
    {
        Index n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    void zero_grad()
    {
        for (auto& p : params_) p.zero_grad();
    }

    /// Copies values, gradients and optimizer state from a snapshot of this
    /// set without moving any element.
    void restore(const ParameterSet& snapshot)
    {
        if (snapshot.size() != size()) throw ShapeError("parameter snapshot size mismatch");
        for (std::size_t i = 0; i < params_.size(); ++i) params_[i] = snapshot.params_[i];
    }

private:
    std::deque<Parameter<Scalar>> params_;
};

template <class Scalar>
class Tape;

/// Handle to a value recorded on a tape.
template <class Scalar>
struct Var
{
    Tape<Scalar>* tape = nullptr;
    std::size_t index = 0;

    const Tensor<Scalar>& value() const { return tape->value(*this); }
    const Shape& shape() const { return value().shape(); }
};

/// Linear record of executed operations. Each node keeps its forward value
/// and a closure that pushes its adjoint onto its inputs; `backward` replays
/// the closures once each, newest first.
template <class Scalar>
class Tape
{
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<Scalar> constant(Tensor<Scalar> value) { return push(std::move(value), nullptr, false, nullptr); }

    Var<Scalar> parameter(Parameter<Scalar>& p) { return push(p.value, nullptr, true, &p); }

    Var<Scalar> record(Tensor<Scalar> value, Backward backward, bool requires_grad)
    {
        if (!value.all_finite()) throw NumericError("non-finite value in forward pass");
        return push(std::move(value), requires_grad ? std::move(backward) : Backward{}, requires_grad, nullptr);
    }

    const Tensor<Scalar>& value(Var<Scalar> v) const { return nodes_.at(v.index).value; }
    const Tensor<Scalar>& value(std::size_t i) const { return nodes_[i].value; }
    bool requires_grad(Var<Scalar> v) const { return nodes_.at(v.index).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Adjoint of node `i`, allocated on first touch.
    Tensor<Scalar>& grad(std::size_t i)
    {
        auto& n = nodes_[i];
        if (n.grad.empty()) n.grad = Tensor<Scalar>(n.value.shape());
        return n.grad;
    }
    bool has_grad(std::size_t i) const { return !nodes_[i].grad.empty(); }
    bool wants_grad(std::size_t i) const { return nodes_[i].requires_grad; }

    /// Accumulates d(loss)/d(param) into every parameter reached from `loss`.
    /// Unreached parameters keep their gradient unchanged.
    void backward(Var<Scalar> loss)
    {
        if (loss.tape != this) throw std::logic_error("loss was not recorded on this tape");
        if (value(loss).size() != 1) throw ShapeError("backward requires a scalar loss, got " + to_string(value(loss).shape()));
        if (!nodes_[loss.index].requires_grad) return;
        grad(loss.index).data().setOnes();
        for (std::size_t i = loss.index + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty()) continue;
            if (!n.grad.all_finite()) throw NumericError("non-finite gradient in backward pass");
            if (n.param != nullptr) {
                n.param->grad.data() += n.grad.data();
            } else if (n.backward) {
                n.backward(*this, i);
            }
            ++visited_;
        }
    }

    /// Number of nodes whose adjoint was propagated in the last backward call(s).
    std::size_t visited() const { return visited_; }

private:
    struct Node
    {
        Tensor<Scalar> value;
        Tensor<Scalar> grad;
        Backward backward;
        bool requires_grad = false;
        Parameter<Scalar>* param = nullptr;
    };

    Var<Scalar> push(Tensor<Scalar> value, Backward backward, bool requires_grad, Parameter<Scalar>* param)
    {
        nodes_.push_back(Node{std::move(value), Tensor<Scalar>{}, std::move(backward), requires_grad, param});
        return Var<Scalar>{this, nodes_.size() - 1};
    }

    std::deque<Node> nodes_;
    std::size_t visited_ = 0;
};

/// Reduction over all elements; handy as a probe loss.
template <class Scalar>
Var<Scalar> sum(Var<Scalar> x)
{
    auto& tape = *x.tape;
    Tensor<Scalar> out(Shape{1});
    out[0] = x.value().data().sum();
    const auto xi = x.index;
    return tape.record(
        std::move(out),
        [xi](Tape<Scalar>& t, std::size_t self) {
            if (!t.wants_grad(xi)) return;
            t.grad(xi).data().array() += t.grad(self)[0];
        },
        tape.requires_grad(x));
}

} // namespace psfv::nn
