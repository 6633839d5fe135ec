#include "lrod/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "lrod/error.hpp"

namespace lrod::ad {

namespace {
// Recording stays on: f may differentiate internally (gradient penalties).
double evaluate(const ScalarFn& f, const Tensor& x) {
    Tape t;
    const Var out = f(t, t.leaf(x));
    return out.value().item();
}
}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const Tensor& point, double eps) {
    if (!(eps > 0.0)) throw ParameterError("grad_check: eps must be positive");
    GradCheckResult r;
    {
        Tape t;
        const Var x = t.leaf(point);
        const Var out = f(t, x);
        if (out.value().size() != 1) throw ShapeError("grad_check needs a scalar function");
        if (out.requires_grad()) {
            const Var w[] = {x};
            r.analytic = gradient(out, w)[0];
        } else {
            r.analytic = Tensor(point.shape(), 0.0);
        }
    }
    r.numeric = Tensor(point.shape());
    Tensor probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double x0 = probe[i];
        probe[i] = x0 + eps;
        const double fp = evaluate(f, probe);
        probe[i] = x0 - eps;
        const double fm = evaluate(f, probe);
        probe[i] = x0;
        r.numeric[i] = (fp - fm) / (2.0 * eps);
        const double a = r.analytic[i], n = r.numeric[i];
        const double denom = std::max({1.0, std::abs(a), std::abs(n)});
        r.max_rel_error = std::max(r.max_rel_error, std::abs(a - n) / denom);
    }
    return r;
}

}  // namespace lrod::ad
