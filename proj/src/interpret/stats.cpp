#include "mdfm/interpret/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mdfm::interpret {
namespace {

struct Moments {
    double n, mean, var;
};

// Two-pass mean and unbiased variance.
Moments moments(const std::vector<double>& x, const char* op) {
    if (x.size() < 2) throw std::invalid_argument(std::string(op) + ": each sample needs at least 2 values");
    const double n = static_cast<double>(x.size());
    double s = 0.0;
    for (double v : x) s += v;
    const double mean = s / n;
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return {n, mean, ss / (n - 1.0)};
}

double beta_continued_fraction(double x, double a, double b) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-16;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 10000; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) return h;
    }
    throw std::runtime_error("incomplete_beta: continued fraction did not converge");
}

// Stirling remainder of lgamma(z), accurate to ~1e-16 for z >= 20.
double stirling_tail(double z) {
    const double r = 1.0 / z, r2 = r * r;
    return r * (1.0 / 12.0 - r2 * (1.0 / 360.0 - r2 * (1.0 / 1260.0 - r2 / 1680.0)));
}

// log B(a, b). lgamma(a + b) - lgamma(a) cancels badly for large a, so the
// difference is expanded analytically there.
double log_beta(double a, double b) {
    const double big = std::max(a, b), small = std::min(a, b);
    if (big < 20.0) return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    const double s = big + small;
    const double diff = (big - 0.5) * std::log1p(-small / s) - small * std::log(s) + small +
                        stirling_tail(big) - stirling_tail(s);
    return std::lgamma(small) + diff;
}

// I_x(a, b) with y = 1 - x supplied separately so callers can avoid the
// rounding of forming it.
double incomplete_beta_xy(double x, double y, double a, double b) {
    if (x == 0.0 || y == 1.0) return 0.0;
    if (y == 0.0 || x == 1.0) return 1.0;
    const double front = std::exp(a * std::log(x) + b * std::log(y) - log_beta(a, b));
    // The fraction converges fast for x < (a+1)/(a+b+2); use the symmetry
    // I_x(a,b) = 1 - I_{1-x}(b,a) elsewhere.
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(x, a, b) / a;
    return 1.0 - front * beta_continued_fraction(y, b, a) / b;
}

}  // namespace

CohensD cohens_d(const std::vector<double>& a, const std::vector<double>& b) {
    const Moments ma = moments(a, "cohens_d"), mb = moments(b, "cohens_d");
    CohensD r;
    r.s_p = std::sqrt(((ma.n - 1.0) * ma.var + (mb.n - 1.0) * mb.var) / (ma.n + mb.n - 2.0));
    if (r.s_p > 0.0) {
        r.d = (ma.mean - mb.mean) / r.s_p;
        r.defined = true;
    }
    return r;
}

WelchResult welch_t(const std::vector<double>& a, const std::vector<double>& b) {
    const Moments ma = moments(a, "welch_t"), mb = moments(b, "welch_t");
    WelchResult r;
    const double va = ma.var / ma.n, vb = mb.var / mb.n;
    const double se2 = va + vb;
    if (!(se2 > 0.0)) return r;
    r.t = (ma.mean - mb.mean) / std::sqrt(se2);
    r.df = se2 * se2 / (va * va / (ma.n - 1.0) + vb * vb / (mb.n - 1.0));
    r.p = student_t_two_sided_p(r.t, r.df);
    r.defined = true;
    return r;
}

double incomplete_beta(double x, double a, double b) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("incomplete_beta: a and b must be positive");
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("incomplete_beta: x outside [0, 1]");
    return incomplete_beta_xy(x, 1.0 - x, a, b);
}

double student_t_two_sided_p(double t, double df) {
    if (!(df > 0.0)) throw std::invalid_argument("student_t_two_sided_p: df must be positive");
    if (std::isnan(t)) throw std::invalid_argument("student_t_two_sided_p: t is NaN");
    if (std::isinf(t)) return 0.0;
    const double t2 = t * t;
    return std::min(1.0, incomplete_beta_xy(df / (df + t2), t2 / (df + t2), df / 2.0, 0.5));
}

std::vector<double> benjamini_hochberg(const std::vector<double>& p) {
    const std::size_t m = p.size();
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    std::vector<double> out(m);
    double running = 1.0;
    for (std::size_t r = m; r-- > 0;) {
        const double adj = r + 1 == m ? p[idx[r]] : p[idx[r]] * static_cast<double>(m) / static_cast<double>(r + 1);
        running = std::min(running, adj);
        out[idx[r]] = running;
    }
    return out;
}

}  // namespace mdfm::interpret
