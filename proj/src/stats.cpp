#include "htune/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "htune/errors.hpp"

namespace htune {

double student_t_pdf(double x, double df) {
    const double log_norm =
        std::lgamma((df + 1.0) / 2.0) - std::lgamma(df / 2.0) - 0.5 * std::log(df * std::numbers::pi);
    return std::exp(log_norm - (df + 1.0) / 2.0 * std::log1p(x * x / df));
}

namespace {

template <typename F>
double simpson(F f, double a, double b, double fa, double fm, double fb, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    return simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) +
           simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
}

}  // namespace

double student_t_two_sided_p(double t, double df, double tol) {
    if (!(df > 0.0)) throw InputError("t distribution needs positive degrees of freedom");
    const double x = std::abs(t);
    if (x == 0.0) return 1.0;
    auto f = [df](double u) { return student_t_pdf(u, df); };
    const double fa = f(0.0), fb = f(x), fm = f(0.5 * x);
    const double whole = x / 6.0 * (fa + 4.0 * fm + fb);
    const double half_mass = simpson(f, 0.0, x, fa, fm, fb, whole, tol, 50);
    return std::clamp(1.0 - 2.0 * half_mass, 0.0, 1.0);
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw InputError("paired_t_test: samples differ in length");
    const std::size_t n = a.size();
    if (n < 2) throw InputError("paired_t_test: need at least two pairs");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0)) throw DegenerateSampleError("paired_t_test: differences have zero variance");
    TTestResult r;
    r.df = static_cast<double>(n - 1);
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    r.p = student_t_two_sided_p(r.t, r.df);
    return r;
}

}  // namespace htune
