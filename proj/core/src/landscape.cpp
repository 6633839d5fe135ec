#include "lrod/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "lrod/error.hpp"
#include "lrod/rng.hpp"
#include "lrod/util.hpp"

namespace lrod {

namespace {

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

Directions sample_directions(const Tensor& theta, const ParamLayout& layout, std::uint64_t seed) {
    if (theta.rank() != 1 || theta.size() != layout.total())
        throw ShapeError("sample_directions: theta " + to_string(theta.shape()) + " does not match layout of " +
                         std::to_string(layout.total()));
    Directions d;
    d.seed_delta = derive_seed(seed, "landscape-delta");
    d.seed_eta = derive_seed(seed, "landscape-eta");
    Tensor a = Rng(d.seed_delta).normal_tensor(theta.shape());
    Tensor b = Rng(d.seed_eta).normal_tensor(theta.shape());
    const double aa = dot(a, a);
    b = axpy(-dot(a, b) / aa, a, b);

    for (const auto& e : layout.entries()) {
        const std::size_t rows = e.shape.size() >= 2 ? e.shape[0] : 1;
        const std::size_t len = e.size() / rows;
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t off = e.offset + r * len;
            double nt = 0, na = 0, nb = 0;
            for (std::size_t i = off; i < off + len; ++i) {
                nt += theta[i] * theta[i];
                na += a[i] * a[i];
                nb += b[i] * b[i];
            }
            nt = std::sqrt(nt);
            if (nt == 0.0) {
                d.zero_filters.push_back(rows > 1 ? e.name + "[" + std::to_string(r) + "]" : e.name);
                for (std::size_t i = off; i < off + len; ++i) a[i] = b[i] = 0.0;
                continue;
            }
            const double sa = nt / std::sqrt(na), sb = nt / std::sqrt(nb);
            for (std::size_t i = off; i < off + len; ++i) {
                a[i] *= sa;
                b[i] *= sb;
            }
        }
    }
    d.delta = std::move(a);
    d.eta = std::move(b);
    return d;
}

std::vector<double> grid_coordinates(ScanRange r, std::size_t n) {
    if (n < 3 || n % 2 == 0) throw ParameterError("landscape grid size must be odd and >= 3, got " + std::to_string(n));
    if (!(r.hi > r.lo)) throw ParameterError("landscape range must have hi > lo");
    const double mid = 0.5 * (r.lo + r.hi), half = 0.5 * (r.hi - r.lo);
    const double m = static_cast<double>(n - 1);
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = mid + half * (2.0 * static_cast<double>(i) - m) / m;
    return c;
}

LandscapeGrid scan(const ThetaLoss& loss, const Tensor& theta, const Directions& dirs, ScanRange alpha,
                   ScanRange beta, std::size_t n) {
    require_same_shape(theta.shape(), dirs.delta.shape(), "landscape delta");
    require_same_shape(theta.shape(), dirs.eta.shape(), "landscape eta");
    LandscapeGrid g;
    g.alphas = grid_coordinates(alpha, n);
    g.betas = grid_coordinates(beta, n);
    g.seed_delta = dirs.seed_delta;
    g.seed_eta = dirs.seed_eta;
    g.values = Tensor({n, n});
    parallel_for(n * n, [&](std::size_t k) {
        const double a = g.alphas[k / n], b = g.betas[k % n];
        Tensor p(theta.shape());
        for (std::size_t i = 0; i < theta.size(); ++i) p[i] = theta[i] + a * dirs.delta[i] + b * dirs.eta[i];
        const double v = loss(p);
        g.values[k] = std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    });
    g.center_loss = g.at(n / 2, n / 2);
    return g;
}

double roughness(const LandscapeGrid& grid) {
    const std::size_t na = grid.alphas.size(), nb = grid.betas.size();
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : grid.values.data())
        if (std::isfinite(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    double sum = 0;
    std::size_t count = 0;
    for (std::size_t i = 1; i + 1 < na; ++i)
        for (std::size_t j = 1; j + 1 < nb; ++j) {
            const double lap =
                grid.at(i + 1, j) + grid.at(i - 1, j) + grid.at(i, j + 1) + grid.at(i, j - 1) - 4.0 * grid.at(i, j);
            if (!std::isfinite(lap)) continue;
            sum += std::abs(lap);
            ++count;
        }
    if (count == 0 || !(hi > lo)) return 0.0;
    return sum / static_cast<double>(count) / (hi - lo);
}

std::string LandscapeGrid::to_csv() const {
    std::string s;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        for (std::size_t j = 0; j < betas.size(); ++j) {
            if (j) s += ',';
            s += fmt(at(i, j));
        }
        s += '\n';
    }
    return s;
}

nlohmann::json LandscapeGrid::metadata_json() const {
    nlohmann::json j;
    j["label"] = label;
    j["alphas"] = alphas;
    j["betas"] = betas;
    j["seed_delta"] = seed_delta;
    j["seed_eta"] = seed_eta;
    j["center_loss"] = center_loss;
    j["roughness"] = roughness(*this);
    std::size_t bad = 0;
    for (double v : values.data()) bad += std::isinf(v);
    j["non_finite_cells"] = bad;
    return j;
}

std::vector<TrajectoryPoint> project_trajectory(const std::vector<std::pair<std::size_t, Tensor>>& checkpoints,
                                                const Tensor& delta, const Tensor& eta) {
    if (checkpoints.size() < 2) throw ParameterError("project_trajectory needs at least two checkpoints");
    require_same_shape(delta.shape(), eta.shape(), "trajectory directions");
    const double dd = dot(delta, delta), ee = dot(eta, eta), de = dot(delta, eta);
    const double det = dd * ee - de * de;
    if (!(det > 1e-12 * dd * ee)) throw NumericError("project_trajectory: directions are linearly dependent");
    const Tensor& final_theta = checkpoints.back().second;
    std::vector<TrajectoryPoint> out;
    for (const auto& [step, theta] : checkpoints) {
        require_same_shape(theta.shape(), delta.shape(), "trajectory checkpoint");
        const Tensor r = axpy(-1.0, final_theta, theta);
        const double rd = dot(r, delta), re = dot(r, eta);
        out.push_back({step, (ee * rd - de * re) / det, (dd * re - de * rd) / det});
    }
    return out;
}

std::string trajectory_csv(const std::vector<TrajectoryPoint>& points) {
    std::string s = "step,alpha,beta\n";
    for (const auto& p : points) s += std::to_string(p.step) + ',' + fmt(p.alpha) + ',' + fmt(p.beta) + '\n';
    return s;
}

}  // namespace lrod
