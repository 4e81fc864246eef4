#pragma once

#include <vector>

namespace htune {

struct TTestResult {
    double t = 0.0;
    double p = 1.0;  // two-sided
    double df = 0.0;
};

/// Paired t-test on d = a - b. Unequal lengths or n < 2 are InputErrors;
/// zero variance of d is a DegenerateSampleError.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

/// Student t density with df degrees of freedom.
double student_t_pdf(double x, double df);

/// Two-sided tail probability P(|T| >= |t|), by adaptive Simpson
/// integration of the density over [0, |t|].
double student_t_two_sided_p(double t, double df, double tol = 1e-10);

}  // namespace htune
