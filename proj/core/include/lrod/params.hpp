#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrod/tape.hpp"

namespace lrod {

struct ParamEntry {
    std::string name;
    std::size_t offset = 0;
    Shape shape;
    std::size_t size() const { return numel(shape); }
};

/// Named partition of a flat parameter vector. Segments are contiguous,
/// appear in insertion order, and cover [0, total()).
class ParamLayout {
public:
    void add(std::string name, Shape shape);

    const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
    std::size_t total() const noexcept { return total_; }
    const ParamEntry& find(std::string_view name) const;
    bool contains(std::string_view name) const;
    /// Names starting with `prefix`, in layout order.
    std::vector<std::string> names_with_prefix(std::string_view prefix) const;
    /// Layout restricted to names starting with `prefix` (offsets recomputed).
    ParamLayout subset(std::string_view prefix) const;

    nlohmann::json to_json() const;
    static ParamLayout from_json(const nlohmann::json& j);

    friend bool operator==(const ParamLayout& a, const ParamLayout& b);

private:
    std::vector<ParamEntry> entries_;
    std::size_t total_ = 0;
};

/// Flat parameter vector plus its layout.
struct ModelParams {
    ParamLayout layout;
    Tensor values;  // shape {layout.total()}

    Tensor segment(std::string_view name) const;
    void set_segment(std::string_view name, const Tensor& value);
    /// Flat vector of the segments whose names start with `prefix`.
    Tensor gather_prefix(std::string_view prefix) const;
    void scatter_prefix(std::string_view prefix, const Tensor& flat);
};

/// Parameter segments bound as Vars on a tape.
class BoundParams {
public:
    BoundParams() = default;
    BoundParams(ParamLayout layout, std::vector<ad::Var> vars);

    const ad::Var& operator[](std::string_view name) const;
    bool contains(std::string_view name) const { return layout_.contains(name); }
    const ParamLayout& layout() const noexcept { return layout_; }
    const std::vector<ad::Var>& vars() const noexcept { return vars_; }
    /// Vars for names starting with `prefix`, in layout order.
    std::vector<ad::Var> with_prefix(std::string_view prefix) const;

private:
    ParamLayout layout_;
    std::vector<ad::Var> vars_;
};

/// One leaf per segment; `trainable(name)` decides requires-grad.
BoundParams bind(ad::Tape& tape, const ModelParams& params,
                 const std::function<bool(std::string_view)>& trainable = [](std::string_view) { return true; });

/// Segments sliced out of a single flat Var (for differentiating with respect
/// to a whole sub-vector at once).
BoundParams bind_flat(const ad::Var& flat, const ParamLayout& layout);

/// Concatenate per-segment tensors (in `layout` order) into one flat vector.
Tensor flatten(const ParamLayout& layout, const std::vector<Tensor>& segments);

}  // namespace lrod
