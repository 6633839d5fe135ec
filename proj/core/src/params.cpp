#include "lrod/params.hpp"

#include <algorithm>

#include "lrod/error.hpp"
#include "lrod/ops.hpp"

namespace lrod {

void ParamLayout::add(std::string name, Shape shape) {
    if (contains(name)) throw ParameterError("duplicate parameter name: " + name);
    if (shape.empty() || numel(shape) == 0) throw ShapeError("parameter " + name + " needs a non-empty shape");
    ParamEntry e{std::move(name), total_, std::move(shape)};
    total_ += e.size();
    entries_.push_back(std::move(e));
}

const ParamEntry& ParamLayout::find(std::string_view name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e;
    throw ParameterError("unknown parameter: " + std::string(name));
}

bool ParamLayout::contains(std::string_view name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.name == name; });
}

std::vector<std::string> ParamLayout::names_with_prefix(std::string_view prefix) const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
        if (std::string_view(e.name).starts_with(prefix)) out.push_back(e.name);
    return out;
}

ParamLayout ParamLayout::subset(std::string_view prefix) const {
    ParamLayout out;
    for (const auto& e : entries_)
        if (std::string_view(e.name).starts_with(prefix)) out.add(e.name, e.shape);
    return out;
}

nlohmann::json ParamLayout::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries_) arr.push_back({{"name", e.name}, {"offset", e.offset}, {"shape", e.shape}});
    return {{"entries", arr}, {"total", total_}};
}

ParamLayout ParamLayout::from_json(const nlohmann::json& j) {
    ParamLayout l;
    for (const auto& e : j.at("entries")) {
        l.add(e.at("name").get<std::string>(), e.at("shape").get<Shape>());
        if (l.entries_.back().offset != e.at("offset").get<std::size_t>())
            throw ParameterError("layout offsets are not contiguous at " + l.entries_.back().name);
    }
    if (l.total_ != j.at("total").get<std::size_t>()) throw ParameterError("layout total mismatch");
    return l;
}

bool operator==(const ParamLayout& a, const ParamLayout& b) {
    if (a.total_ != b.total_ || a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i)
        if (a.entries_[i].name != b.entries_[i].name || a.entries_[i].shape != b.entries_[i].shape) return false;
    return true;
}

Tensor ModelParams::segment(std::string_view name) const {
    const auto& e = layout.find(name);
    std::vector<double> d(values.data().begin() + static_cast<std::ptrdiff_t>(e.offset),
                          values.data().begin() + static_cast<std::ptrdiff_t>(e.offset + e.size()));
    return Tensor(e.shape, std::move(d));
}

void ModelParams::set_segment(std::string_view name, const Tensor& value) {
    const auto& e = layout.find(name);
    require_same_shape(value.shape(), e.shape, "set_segment");
    std::copy(value.data().begin(), value.data().end(), values.data().begin() + static_cast<std::ptrdiff_t>(e.offset));
}

Tensor ModelParams::gather_prefix(std::string_view prefix) const {
    std::vector<double> d;
    for (const auto& e : layout.entries())
        if (std::string_view(e.name).starts_with(prefix))
            d.insert(d.end(), values.data().begin() + static_cast<std::ptrdiff_t>(e.offset),
                     values.data().begin() + static_cast<std::ptrdiff_t>(e.offset + e.size()));
    if (d.empty()) throw ParameterError("no parameters with prefix " + std::string(prefix));
    const std::size_t n = d.size();
    return Tensor({n}, std::move(d));
}

void ModelParams::scatter_prefix(std::string_view prefix, const Tensor& flat) {
    std::size_t pos = 0;
    for (const auto& e : layout.entries()) {
        if (!std::string_view(e.name).starts_with(prefix)) continue;
        if (pos + e.size() > flat.size()) throw ShapeError("scatter_prefix: flat vector too short");
        std::copy_n(flat.data().begin() + static_cast<std::ptrdiff_t>(pos), e.size(),
                    values.data().begin() + static_cast<std::ptrdiff_t>(e.offset));
        pos += e.size();
    }
    if (pos != flat.size()) throw ShapeError("scatter_prefix: flat vector length mismatch");
}

BoundParams::BoundParams(ParamLayout layout, std::vector<ad::Var> vars)
    : layout_(std::move(layout)), vars_(std::move(vars)) {
    if (vars_.size() != layout_.entries().size()) throw ParameterError("BoundParams: var count mismatch");
}

const ad::Var& BoundParams::operator[](std::string_view name) const {
    const auto& entries = layout_.entries();
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (entries[i].name == name) return vars_[i];
    throw ParameterError("unbound parameter: " + std::string(name));
}

std::vector<ad::Var> BoundParams::with_prefix(std::string_view prefix) const {
    std::vector<ad::Var> out;
    const auto& entries = layout_.entries();
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (std::string_view(entries[i].name).starts_with(prefix)) out.push_back(vars_[i]);
    return out;
}

BoundParams bind(ad::Tape& tape, const ModelParams& params, const std::function<bool(std::string_view)>& trainable) {
    std::vector<ad::Var> vars;
    for (const auto& e : params.layout.entries()) vars.push_back(tape.leaf(params.segment(e.name), trainable(e.name)));
    return BoundParams(params.layout, std::move(vars));
}

BoundParams bind_flat(const ad::Var& flat, const ParamLayout& layout) {
    require_same_shape(flat.shape(), {layout.total()}, "bind_flat");
    std::vector<ad::Var> vars;
    for (const auto& e : layout.entries()) vars.push_back(ops::reshape(ops::slice(flat, 0, e.offset, e.size()), e.shape));
    return BoundParams(layout, std::move(vars));
}

Tensor flatten(const ParamLayout& layout, const std::vector<Tensor>& segments) {
    if (segments.size() != layout.entries().size()) throw ShapeError("flatten: segment count mismatch");
    Tensor out({layout.total()});
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto& e = layout.entries()[i];
        require_same_shape(segments[i].shape(), e.shape, "flatten");
        std::copy(segments[i].data().begin(), segments[i].data().end(),
                  out.data().begin() + static_cast<std::ptrdiff_t>(e.offset));
    }
    return out;
}

}  // namespace lrod
