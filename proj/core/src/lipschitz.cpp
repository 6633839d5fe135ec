#include "lrod/lipschitz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "lrod/degradation.hpp"
#include "lrod/error.hpp"
#include "lrod/ops.hpp"
#include "lrod/rng.hpp"
#include "lrod/util.hpp"

namespace lrod {

using ad::Tape;
using ad::Var;

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

SpectralEstimate power_iteration(const LinearMap& apply, const LinearMap& apply_adjoint, const Shape& input_shape,
                                 const PowerOptions& opt) {
    if (opt.max_iters < 1) throw ParameterError("power iteration needs at least one iteration");
    if (!(opt.tol > 0)) throw ParameterError("power iteration tolerance must be positive");
    Tensor v = opt.initial ? *opt.initial : Rng(derive_seed(opt.seed, "power-start")).normal_tensor(input_shape);
    require_same_shape(v.shape(), input_shape, "power iteration start vector");
    double nv = norm2(v);
    if (nv == 0) {
        v = Rng(derive_seed(opt.seed, "power-start")).normal_tensor(input_shape);
        nv = norm2(v);
    }
    v = scaled(v, 1.0 / nv);

    SpectralEstimate est;
    double prev = -1;
    for (std::size_t it = 1; it <= opt.max_iters; ++it) {
        const Tensor jv = apply(v);
        const double s = norm2(jv);
        est.iters = it;
        if (s == 0) {
            est.sigma = 0;
            est.converged = true;
            est.u = Tensor(jv.shape(), 0.0);
            est.v = v;
            est.history.push_back(0);
            return est;
        }
        est.sigma = s;
        est.u = scaled(jv, 1.0 / s);
        est.v = v;
        est.history.push_back(s);
        if (prev > 0 && std::abs(s - prev) <= opt.tol * s) {
            est.converged = true;
            break;
        }
        prev = s;
        if (it == opt.max_iters) break;
        const Tensor w = apply_adjoint(est.u);
        const double nw = norm2(w);
        if (nw == 0) break;
        v = scaled(w, 1.0 / nw);
    }
    return est;
}

namespace {
auto frozen(const ModelParams& p) {
    return [p](Tape& t) { return bind(t, p, [](std::string_view) { return false; }); };
}
}  // namespace

ModelFn detector_fn(const ModelParams& params, const ModelConfig& cfg) {
    return [b = frozen(params), cfg](Tape& t, const Var& x) { return detector_forward(b(t), x, cfg); };
}

ModelFn restorer_fn(const ModelParams& params, const ModelConfig& cfg) {
    return [b = frozen(params), cfg](Tape& t, const Var& x) { return restorer_forward(b(t), x, cfg); };
}

ModelFn cascade_fn(const ModelParams& restorer, const ModelParams& detector, const ModelConfig& cfg) {
    return [r = frozen(restorer), d = frozen(detector), cfg](Tape& t, const Var& x) {
        return cascade_forward(r(t), d(t), x, cfg);
    };
}

ModelFn lrod_restoration_fn(const ModelParams& params, const ModelConfig& cfg) {
    return [b = frozen(params), cfg](Tape& t, const Var& x) {
        const BoundParams bp = b(t);
        return restore_forward(bp, backbone_forward(bp, x, cfg), cfg);
    };
}

BackboneFn make_backbone_fn(const ParamLayout& backbone_layout, const ModelConfig& cfg) {
    return [backbone_layout, cfg](Tape&, const Var& theta_b, const Var& x) {
        return backbone_forward(bind_flat(theta_b, backbone_layout), x, cfg).f4;
    };
}

SpectralEstimate input_spectral_norm(const ModelFn& f, const Tensor& x, const PowerOptions& opt) {
    Tape t;
    const Var xv = t.leaf(x);
    const Var out = f(t, xv);
    if (!out.requires_grad()) {
        SpectralEstimate est;
        est.converged = true;
        est.iters = 0;
        est.u = Tensor(out.shape(), 0.0);
        est.v = Tensor(x.shape(), 0.0);
        return est;
    }
    ad::JvpOperator op(out, xv);
    const Var wrt[] = {xv};
    auto adjoint = [&](const Tensor& u) {
        const auto mark = t.mark();
        Tensor r = ad::vjp(out, wrt, u)[0];
        t.rewind(mark);
        return r;
    };
    return power_iteration([&](const Tensor& v) { return op.apply(v); }, adjoint, x.shape(), opt);
}

double quantile_sorted(const std::vector<double>& s, double p) {
    if (s.empty()) throw ParameterError("quantile of an empty sample");
    if (!(p >= 0 && p <= 1)) throw ParameterError("quantile level must be in [0, 1]");
    const double pos = p * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return s[lo] + (s[hi] - s[lo]) * frac;
}

LipschitzReport summarize(std::vector<SampleNorm> norms) {
    if (norms.empty()) throw ParameterError("Lipschitz report needs at least one sample");
    LipschitzReport r;
    std::vector<double> s;
    for (const auto& n : norms) s.push_back(n.sigma);
    std::sort(s.begin(), s.end());
    r.per_sample = std::move(norms);
    r.min = s.front();
    r.max = s.back();
    r.sup = s.back();
    r.q1 = quantile_sorted(s, 0.25);
    r.median = quantile_sorted(s, 0.5);
    r.q3 = quantile_sorted(s, 0.75);
    return r;
}

std::string LipschitzReport::to_csv() const {
    std::string out = "id,sigma,iters,converged\n";
    for (const auto& n : per_sample)
        out += n.id + "," + fmt(n.sigma) + "," + std::to_string(n.iters) + "," + (n.converged ? "1" : "0") + "\n";
    return out;
}

nlohmann::json LipschitzReport::summary_json() const {
    std::size_t unconverged = 0;
    for (const auto& n : per_sample) unconverged += n.converged ? 0 : 1;
    return {{"n", per_sample.size()}, {"sup", sup},   {"q1", q1}, {"median", median}, {"q3", q3},
            {"min", min},             {"max", max},   {"unconverged", unconverged}};
}

LipschitzReport dataset_sweep(const ModelFn& f, const std::vector<Sample>& samples, const PowerOptions& opt) {
    if (samples.empty()) throw ParameterError("dataset_sweep needs at least one sample");
    std::vector<SampleNorm> norms(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
        PowerOptions o = opt;
        o.seed = derive_seed(opt.seed, "power:" + samples[i].id);
        o.initial.reset();
        const SpectralEstimate e = input_spectral_norm(f, samples[i].x, o);
        norms[i] = {samples[i].id, e.sigma, e.iters, e.converged};
    });
    return summarize(std::move(norms));
}

double beta_jacobian_norm(const ModelFn& f, const Tensor& clean, const Tensor& depth, double beta,
                          const std::array<double, 3>& airlight) {
    Tape t;
    const Var b = t.leaf(Tensor({1}, beta));
    const Var out = f(t, apply_haze(t.constant(clean), depth, b, airlight));
    if (!out.requires_grad()) return 0.0;
    return norm2(ad::jvp(out, b, Tensor({1}, 1.0)));
}

double feature_shift_fraction(const FeatureFn& features, const Tensor& x, const Tensor& x_shifted, double threshold) {
    if (!(threshold >= 0)) throw ParameterError("feature shift threshold must be non-negative");
    require_same_shape(x.shape(), x_shifted.shape(), "feature_shift_fraction");
    const auto a = features(x), b = features(x_shifted);
    if (a.size() != b.size()) throw ShapeError("feature_shift_fraction: feature lists differ in length");
    std::size_t total = 0, shifted = 0;
    for (std::size_t m = 0; m < a.size(); ++m) {
        require_same_shape(a[m].shape(), b[m].shape(), "feature_shift_fraction map");
        if (a[m].rank() != 4) throw ShapeError("feature maps must be (N, C, h, w), got " + to_string(a[m].shape()));
        const std::size_t N = a[m].dim(0), C = a[m].dim(1), P = a[m].dim(2) * a[m].dim(3);
        for (std::size_t c = 0; c < C; ++c) {
            double change = 0, scale = 0;
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t p = 0; p < P; ++p) {
                    const std::size_t i = (n * C + c) * P + p;
                    change += std::abs(b[m][i] - a[m][i]);
                    scale += std::abs(a[m][i]);
                }
            ++total;
            if (change > threshold * scale) ++shifted;
        }
    }
    return total ? static_cast<double>(shifted) / static_cast<double>(total) : 0.0;
}

LipProxy backbone_lip_proxy(const BackboneFn& f, const Tensor& theta_b, const std::vector<Tensor>& probes,
                            const PowerOptions& opt, const std::vector<SpectralEstimate>* warm) {
    if (probes.empty()) throw ParameterError("Lipschitz proxy needs at least one probe");
    if (warm && warm->size() != probes.size()) throw ParameterError("warm start count does not match probes");
    LipProxy p;
    p.per_probe.resize(probes.size());
    parallel_for(probes.size(), [&](std::size_t i) {
        PowerOptions o = opt;
        o.seed = derive_seed(opt.seed, "probe", i);
        o.initial.reset();
        if (warm) o.initial = (*warm)[i].v;
        const ModelFn g = [&](Tape& t, const Var& x) { return f(t, t.constant(theta_b), x); };
        p.per_probe[i] = input_spectral_norm(g, probes[i], o);
    });
    for (std::size_t i = 0; i < probes.size(); ++i)
        if (p.per_probe[i].sigma > p.sigma || i == 0) {
            p.sigma = p.per_probe[i].sigma;
            p.argmax = i;
        }
    return p;
}

Tensor lip_gradient(const BackboneFn& f, const Tensor& theta_b, const Tensor& x, const Tensor& u, const Tensor& v) {
    Tape t;
    const Var th = t.leaf(theta_b);
    const Var xv = t.leaf(x);
    const Var out = f(t, th, xv);
    const Var wrt_x[] = {xv};
    const Var jtu = ad::vjp_graph(out, wrt_x, t.constant(u))[0];
    const Var s = ops::sum(ops::mul(jtu, t.constant(v)));
    if (!s.requires_grad()) return Tensor(theta_b.shape(), 0.0);
    const Var wrt_th[] = {th};
    return ad::gradient(s, wrt_th)[0];
}

Remark1Trace remark1_audit(const std::vector<AuditRecord>& records, const BackboneFn& f,
                           const std::vector<Tensor>& probes, const PowerOptions& opt) {
    Remark1Trace trace;
    std::optional<LipProxy> carried;  // proxy at the previous record's theta_next
    const Tensor* carried_theta = nullptr;
    for (const AuditRecord& r : records) {
        if (!(r.lr > 0)) throw ParameterError("audit record needs a positive learning rate");
        require_same_shape(r.g_det.shape(), r.theta.shape(), "audit g_det");
        require_same_shape(r.g_res.shape(), r.theta.shape(), "audit g_res");
        require_same_shape(r.g_step.shape(), r.theta.shape(), "audit g_step");
        LipProxy now;
        if (carried && carried_theta && *carried_theta == r.theta)
            now = std::move(*carried);
        else
            now = backbone_lip_proxy(f, r.theta, probes, opt, carried ? &carried->per_probe : nullptr);
        carried.reset();
        carried_theta = nullptr;

        Remark1Row row;
        row.step = r.step;
        row.lr = r.lr;
        row.lambda = r.lambda;
        row.lip = now.sigma;
        row.xstar = now.argmax;
        const SpectralEstimate& top = now.per_probe[now.argmax];
        const Tensor grad_lip = lip_gradient(f, r.theta, probes[now.argmax], top.u, top.v);
        row.gamma = dot(grad_lip, r.g_res);
        row.xi = -dot(grad_lip, axpy(-r.lambda, r.g_res, r.g_step));
        row.xi_det = dot(grad_lip, r.g_det);
        row.g_res_norm = norm2(r.g_res);
        row.g_det_norm = norm2(r.g_det);
        row.a1 = row.g_res_norm < row.g_det_norm;
        row.a2 = row.gamma > 0;
        row.converged = std::all_of(now.per_probe.begin(), now.per_probe.end(),
                                    [](const SpectralEstimate& e) { return e.converged; });
        if (!r.theta_next) {
            row.gap = true;
        } else {
            LipProxy next = backbone_lip_proxy(f, *r.theta_next, probes, opt, &now.per_probe);
            row.lip_next = next.sigma;
            row.dlipdt = (next.sigma - now.sigma) / r.lr;
            row.residual = row.dlipdt - (-r.lambda * row.gamma + row.xi);
            row.converged = row.converged && std::all_of(next.per_probe.begin(), next.per_probe.end(),
                                                         [](const SpectralEstimate& e) { return e.converged; });
            carried = std::move(next);
            carried_theta = &*r.theta_next;
        }
        trace.rows.push_back(row);
    }
    return trace;
}

std::string Remark1Trace::to_csv() const {
    std::string out = "t,lip,gamma,xi,dlipdt,residual,a1,a2,gap,xi_det,lip_next,xstar,lr,lambda,g_res_norm,g_det_norm,converged\n";
    for (const auto& r : rows) {
        auto opt = [&](double v) { return r.gap ? std::string() : fmt(v); };
        out += std::to_string(r.step) + "," + fmt(r.lip) + "," + fmt(r.gamma) + "," + fmt(r.xi) + "," + opt(r.dlipdt) +
               "," + opt(r.residual) + "," + (r.a1 ? "1" : "0") + "," + (r.a2 ? "1" : "0") + "," +
               (r.gap ? "1" : "0") + "," + fmt(r.xi_det) + "," + opt(r.lip_next) + "," + std::to_string(r.xstar) +
               "," + fmt(r.lr) + "," + fmt(r.lambda) + "," + fmt(r.g_res_norm) + "," + fmt(r.g_det_norm) + "," +
               (r.converged ? "1" : "0") + "\n";
    }
    return out;
}

std::vector<AuditRecord> remark1_toy_records(double mu, double horizon) {
    if (!(mu > 0) || !(horizon > 0)) throw ParameterError("toy audit needs positive mu and horizon");
    const auto steps = static_cast<std::size_t>(std::llround(horizon / mu));
    std::vector<AuditRecord> out;
    out.reserve(steps);
    double theta = 1.0;
    for (std::size_t t = 0; t < steps; ++t) {
        const double g_det = theta - 2.0, g_res = theta - 0.5, g = g_det + g_res;
        const double next = theta - mu * g;
        out.push_back({t, mu, 1.0, Tensor({1}, theta), Tensor({1}, next), Tensor({1}, g_det), Tensor({1}, g_res),
                       Tensor({1}, g)});
        theta = next;
    }
    return out;
}

BackboneFn remark1_toy_backbone() {
    return [](Tape&, const Var& theta, const Var& x) { return ops::mul(ops::square(theta), x); };
}

Remark1Calibration calibrate_remark1(const std::vector<double>& mus) {
    if (mus.size() < 2) throw ParameterError("calibration needs at least two learning rates");
    Remark1Calibration cal;
    cal.mus = mus;
    const std::vector<Tensor> probes{Tensor({1}, 1.0)};
    PowerOptions opt;
    opt.tol = 1e-12;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (double mu : mus) {
        const Remark1Trace tr = remark1_audit(remark1_toy_records(mu), remark1_toy_backbone(), probes, opt);
        double worst = -1e300, worst_ratio = -1e300;
        for (const auto& r : tr.rows) {
            if (r.gap || !r.a1 || !r.a2) continue;
            worst = std::max(worst, r.residual);
            worst_ratio = std::max(worst_ratio, r.residual / mu);
        }
        if (!(worst > 0)) throw NumericError("toy audit produced no positive residual");
        cal.max_residual.push_back(worst);
        cal.c = std::max(cal.c, 2.0 * worst_ratio);
        const double lx = std::log(mu), ly = std::log(worst);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double n = static_cast<double>(mus.size());
    cal.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return cal;
}

}  // namespace lrod
