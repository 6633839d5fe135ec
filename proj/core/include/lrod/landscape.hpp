#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrod/params.hpp"

namespace lrod {

/// Two random directions in parameter space, rescaled filter by filter to
/// the norms of the corresponding filters of theta.
struct Directions {
    Tensor delta, eta;
    std::uint64_t seed_delta = 0, seed_eta = 0;
    /// Filters of theta with zero norm; their direction entries are zero.
    std::vector<std::string> zero_filters;
};

/// A filter is one slice along dim 0 of a segment of rank >= 2 (a conv
/// kernel of one output channel, a row of a dense matrix); a rank-1
/// segment is a single filter.
Directions sample_directions(const Tensor& theta, const ParamLayout& layout, std::uint64_t seed);

struct ScanRange {
    double lo = -1.0, hi = 1.0;
};

/// Grid coordinates lo..hi with n points; the middle point is exactly the
/// midpoint (0 for a symmetric range).
std::vector<double> grid_coordinates(ScanRange r, std::size_t n);

struct LandscapeGrid {
    std::string label;
    std::vector<double> alphas, betas;
    Tensor values;  // {alphas.size(), betas.size()}; +inf where the loss was not finite
    std::uint64_t seed_delta = 0, seed_eta = 0;
    double center_loss = 0;

    double at(std::size_t i, std::size_t j) const { return values[i * betas.size() + j]; }
    /// Bare matrix, one row per alpha.
    std::string to_csv() const;
    nlohmann::json metadata_json() const;
};

/// Loss of a full parameter vector on a fixed batch. Called concurrently.
using ThetaLoss = std::function<double(const Tensor& theta)>;

LandscapeGrid scan(const ThetaLoss& loss, const Tensor& theta, const Directions& dirs, ScanRange alpha,
                   ScanRange beta, std::size_t n);

/// Mean absolute discrete Laplacian over interior cells, divided by the
/// range of the finite values so grids of different loss scales compare.
double roughness(const LandscapeGrid& grid);

struct TrajectoryPoint {
    std::size_t step = 0;
    double alpha = 0, beta = 0;
};

/// Least-squares coordinates of theta_t - theta_final in span(delta, eta),
/// where theta_final is the last checkpoint.
std::vector<TrajectoryPoint> project_trajectory(const std::vector<std::pair<std::size_t, Tensor>>& checkpoints,
                                                const Tensor& delta, const Tensor& eta);

std::string trajectory_csv(const std::vector<TrajectoryPoint>& points);

}  // namespace lrod
