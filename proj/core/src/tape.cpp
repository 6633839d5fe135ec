#include "lrod/tape.hpp"

#include <string>

#include "lrod/error.hpp"
#include "lrod/ops.hpp"

namespace lrod::ad {

Tape& Var::tape() const {
    if (!tape_) throw StructuralError("use of an empty Var");
    return *tape_;
}

const Tensor& Var::value() const { return tape().value(id_); }
bool Var::requires_grad() const { return tape().requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
    if (!value.all_finite()) throw NumericError("leaf value contains non-finite entries");
    nodes_.push_back(Node{std::make_shared<const Tensor>(std::move(value)), {}, {}, requires_grad});
    return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::record(const char* op, Tensor value, std::vector<Var> parents, BackwardFn backward) {
    if (!value.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
    bool needs = false;
    if (recording_) {
        for (const auto& p : parents) {
            if (p.tape_ != this) throw StructuralError(std::string(op) + ": operand belongs to another tape");
            needs = needs || nodes_[p.id_].requires_grad;
        }
    }
    Node node;
    node.value = std::make_shared<const Tensor>(std::move(value));
    if (needs) {
        node.parents.reserve(parents.size());
        for (const auto& p : parents) node.parents.push_back(p.id_);
        node.backward = std::move(backward);
        node.requires_grad = true;
    }
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

void Tape::rewind(Mark m) {
    if (m.size > nodes_.size()) throw StructuralError("rewind past the end of the tape");
    nodes_.resize(m.size);
}

std::vector<Var> Tape::grad(const Var& output, std::span<const Var> wrt, const Var& cotangent, bool create_graph,
                            bool allow_unused) {
    if (output.tape_ != this || cotangent.tape_ != this)
        throw StructuralError("grad: output and cotangent must live on this tape");
    require_same_shape(output.shape(), cotangent.shape(), "grad cotangent");
    const NodeId out = output.id_;
    const std::size_t n = static_cast<std::size_t>(out) + 1;

    std::vector<char> is_wrt(n, 0);
    for (const auto& w : wrt) {
        if (w.tape_ != this) throw StructuralError("grad: wrt Var belongs to another tape");
        if (w.id_ < n) is_wrt[w.id_] = 1;
    }

    // Nodes on a differentiable path from some wrt to the output.
    std::vector<char> leads(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!nodes_[i].requires_grad) continue;
        char l = is_wrt[i];
        for (NodeId p : nodes_[i].parents) l = l || leads[p];
        leads[i] = l;
    }
    std::vector<char> reach(n, 0);
    reach[out] = nodes_[out].requires_grad ? 1 : 0;
    for (std::size_t i = n; i-- > 0;) {
        if (!reach[i]) continue;
        for (NodeId p : nodes_[i].parents) reach[p] = 1;
    }
    for (const auto& w : wrt) {
        if (w.id_ >= n || !reach[w.id_] || !leads[w.id_]) {
            if (allow_unused) continue;
            throw StructuralError("grad: variable " + std::to_string(w.id_) +
                                  " is not a differentiable ancestor of output " + std::to_string(out));
        }
    }

    const bool previous = recording_;
    recording_ = create_graph;
    struct Restore {
        Tape& t;
        bool v;
        ~Restore() { t.recording_ = v; }
    } restore{*this, previous};

    std::vector<Var> grads(n);
    grads[out] = cotangent;
    for (std::size_t i = n; i-- > 0;) {
        if (!reach[i] || !leads[i] || !grads[i].valid()) continue;
        // Copy: the backward call may append nodes and reallocate nodes_.
        BackwardFn fn = nodes_[i].backward;
        std::vector<NodeId> parents = nodes_[i].parents;
        if (!fn) continue;
        std::vector<Var> pg = fn(grads[i]);
        for (std::size_t j = 0; j < parents.size() && j < pg.size(); ++j) {
            const NodeId p = parents[j];
            if (!pg[j].valid() || !leads[p]) continue;
            grads[p] = grads[p].valid() ? ops::add(grads[p], pg[j]) : pg[j];
        }
    }

    std::vector<Var> result;
    result.reserve(wrt.size());
    for (const auto& w : wrt) {
        if (w.id_ < n && grads[w.id_].valid())
            result.push_back(grads[w.id_]);
        else
            result.push_back(constant(Tensor(w.shape(), 0.0)));
    }
    return result;
}

std::vector<Tensor> vjp(const Var& output, std::span<const Var> wrt, const Tensor& cotangent) {
    Tape& t = output.tape();
    auto g = t.grad(output, wrt, t.constant(cotangent), false);
    std::vector<Tensor> out;
    out.reserve(g.size());
    for (auto& v : g) out.push_back(v.value());
    return out;
}

std::vector<Var> vjp_graph(const Var& output, std::span<const Var> wrt, const Var& cotangent) {
    return output.tape().grad(output, wrt, cotangent, true);
}

std::vector<Tensor> gradient(const Var& scalar_output, std::span<const Var> wrt) {
    if (scalar_output.value().size() != 1)
        throw ShapeError("gradient() needs a scalar output, got " + to_string(scalar_output.shape()));
    return vjp(scalar_output, wrt, Tensor(scalar_output.shape(), 1.0));
}

std::vector<Tensor> gradient_allow_unused(const Var& scalar_output, std::span<const Var> wrt) {
    if (scalar_output.value().size() != 1)
        throw ShapeError("gradient() needs a scalar output, got " + to_string(scalar_output.shape()));
    Tape& t = scalar_output.tape();
    std::vector<Tensor> out;
    if (!scalar_output.requires_grad()) {
        for (const auto& w : wrt) out.emplace_back(w.shape(), 0.0);
        return out;
    }
    for (auto& v : t.grad(scalar_output, wrt, t.constant(Tensor(scalar_output.shape(), 1.0)), false, true))
        out.push_back(v.value());
    return out;
}

JvpOperator::JvpOperator(const Var& output, const Var& wrt) : output_(output), wrt_(wrt) {
    Tape& t = output.tape();
    probe_ = t.leaf(Tensor(output.shape(), 0.0), true);
    const Var w[] = {wrt};
    vjp_of_probe_ = t.grad(output, w, probe_, true)[0];
}

Tensor JvpOperator::apply(const Tensor& tangent) {
    require_same_shape(tangent.shape(), wrt_.shape(), "jvp tangent");
    Tape& t = output_.tape();
    const auto mark = t.mark();
    Tensor result;
    if (!vjp_of_probe_.requires_grad()) {
        // The VJP does not depend on the probe: the Jacobian is zero.
        result = Tensor(output_.shape(), 0.0);
    } else {
        const Var inner = ops::sum(ops::mul(vjp_of_probe_, t.constant(tangent)));
        const Var p[] = {probe_};
        result = t.grad(inner, p, t.constant(Tensor(inner.shape(), 1.0)), false)[0].value();
    }
    t.rewind(mark);
    return result;
}

Tensor jvp(const Var& output, const Var& wrt, const Tensor& tangent) {
    Tape& t = output.tape();
    const auto mark = t.mark();
    JvpOperator op(output, wrt);
    Tensor r = op.apply(tangent);
    t.rewind(mark);
    return r;
}

}  // namespace lrod::ad
