#pragma once

#include <vector>

namespace mdfm::interpret {

struct CohensD {
    double d = 0.0;
    double s_p = 0.0;  // pooled standard deviation
    bool defined = false;  // false when s_p == 0
};

// (mean(a) - mean(b)) / s_p with sample variances. Throws
// std::invalid_argument unless both samples have at least 2 values.
CohensD cohens_d(const std::vector<double>& a, const std::vector<double>& b);

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;  // two-sided
    bool defined = false;  // false when both variances are 0
};

WelchResult welch_t(const std::vector<double>& a, const std::vector<double>& b);

// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
double incomplete_beta(double x, double a, double b);
// Two-sided P(|T| >= |t|) for Student's t with `df` degrees of freedom.
double student_t_two_sided_p(double t, double df);

// Benjamini-Hochberg adjusted p-values, in input order.
std::vector<double> benjamini_hochberg(const std::vector<double>& p);

}  // namespace mdfm::interpret
