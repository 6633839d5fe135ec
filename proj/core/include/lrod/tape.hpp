#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "lrod/tensor.hpp"

namespace lrod::ad {

using NodeId = std::uint32_t;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; the node's value never changes
/// after creation.
class Var {
public:
    Var() = default;

    bool valid() const noexcept { return tape_ != nullptr; }
    Tape& tape() const;
    NodeId id() const noexcept { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;

private:
    friend class Tape;
    Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    NodeId id_ = 0;
};

/// Maps the cotangent of a node's output to one cotangent per parent. An
/// invalid Var in the result means "no contribution".
using BackwardFn = std::function<std::vector<Var>(const Var& grad_out)>;

/// Append-only record of a differentiable computation.
///
/// Backward rules are themselves written in terms of tape operations, so a
/// reverse sweep run with `create_graph` appends a differentiable record of
/// the gradient computation; differentiating that again gives second-order
/// quantities. A tape is single-threaded; use one tape per worker.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Append an operation result. If recording is off or no parent requires
    /// a gradient, the result is stored as a constant.
    Var record(const char* op, Tensor value, std::vector<Var> parents, BackwardFn backward);

    const Tensor& value(NodeId id) const { return *nodes_[id].value; }
    bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }
    bool recording() const noexcept { return recording_; }

    struct Mark {
        std::size_t size;
    };
    Mark mark() const noexcept { return {nodes_.size()}; }
    /// Discard every node appended after `m`. Vars created after the mark
    /// become dangling; copy their values out first.
    void rewind(Mark m);

    /// Reverse sweep: returns d<output, cotangent>/d(wrt_i) for each wrt.
    /// With `create_graph` the returned Vars are differentiable functions of
    /// everything they depend on, including a differentiable cotangent.
    /// A wrt that the output does not depend on is an error unless
    /// `allow_unused`, in which case its gradient is zero.
    std::vector<Var> grad(const Var& output, std::span<const Var> wrt, const Var& cotangent,
                          bool create_graph = false, bool allow_unused = false);

    /// RAII guard disabling recording (values only).
    class NoGrad {
    public:
        explicit NoGrad(Tape& t) : tape_(t), previous_(t.recording_) { t.recording_ = false; }
        ~NoGrad() { tape_.recording_ = previous_; }
        NoGrad(const NoGrad&) = delete;
        NoGrad& operator=(const NoGrad&) = delete;

    private:
        Tape& tape_;
        bool previous_;
    };

private:
    struct Node {
        std::shared_ptr<const Tensor> value;
        std::vector<NodeId> parents;
        BackwardFn backward;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    bool recording_ = true;
};

// Convenience wrappers over Tape::grad.

/// Vector-Jacobian product: d<output, cotangent>/d(wrt).
std::vector<Tensor> vjp(const Var& output, std::span<const Var> wrt, const Tensor& cotangent);

/// Differentiable VJP (double-backprop ready).
std::vector<Var> vjp_graph(const Var& output, std::span<const Var> wrt, const Var& cotangent);

/// Gradient of a scalar output.
std::vector<Tensor> gradient(const Var& scalar_output, std::span<const Var> wrt);

/// As gradient(), with zeros for wrt entries the output does not depend on.
std::vector<Tensor> gradient_allow_unused(const Var& scalar_output, std::span<const Var> wrt);

/// Jacobian-vector product J*tangent, computed by differentiating the VJP
/// with respect to a probe cotangent.
Tensor jvp(const Var& output, const Var& wrt, const Tensor& tangent);

/// Reusable JVP operator for repeated products against a fixed point (used
/// by power iteration). Builds the linear-in-probe VJP graph once.
class JvpOperator {
public:
    JvpOperator(const Var& output, const Var& wrt);
    Tensor apply(const Tensor& tangent);

private:
    Var output_;
    Var wrt_;
    Var probe_;
    Var vjp_of_probe_;
};

}  // namespace lrod::ad
