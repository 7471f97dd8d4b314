#include "fluxsim/fit.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>

namespace fluxsim {

namespace {

double rss(const std::function<double(const Eigen::VectorXd&, double)>& model,
           const Eigen::VectorXd& params, const std::vector<double>& x,
           const std::vector<double>& y) {
    double sum = 0;
    for (size_t k = 0; k < x.size(); ++k) {
        const double r = y[k] - model(params, x[k]);
        sum += r * r;
    }
    return sum;
}

void fill_diag(FitDiagnostics* diag, double residual_sq, int iters,
               const std::vector<double>& y) {
    if (!diag) return;
    diag->residual_norm = std::sqrt(residual_sq / std::max<size_t>(y.size(), 1));
    diag->iterations = iters;
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
    double tss = 0;
    for (double v : y) tss += (v - mean) * (v - mean);
    diag->r_squared = tss > 0 ? 1.0 - residual_sq / tss : 1.0;
}

}  // namespace

Eigen::VectorXd levenberg_marquardt(
    const std::function<double(const Eigen::VectorXd&, double)>& model,
    const std::vector<double>& x, const std::vector<double>& y,
    Eigen::VectorXd params, FitDiagnostics* diag, int max_iter) {
    if (x.size() != y.size() || x.empty())
        throw std::invalid_argument("mismatched or empty fit data");
    const int n = int(x.size());
    const int p = int(params.size());
    if (n < p) throw FitFailure("fewer points than parameters");

    double lambda = 1e-3;
    double cost = rss(model, params, x, y);
    int iter = 0;
    for (; iter < max_iter; ++iter) {
        Eigen::MatrixXd jac(n, p);
        Eigen::VectorXd residual(n);
        for (int k = 0; k < n; ++k)
            residual(k) = y[k] - model(params, x[k]);
        for (int j = 0; j < p; ++j) {
            const double h = std::max(1e-8, 1e-7 * std::abs(params(j)));
            Eigen::VectorXd bumped = params;
            bumped(j) += h;
            for (int k = 0; k < n; ++k)
                jac(k, j) = (model(bumped, x[k]) - model(params, x[k])) / h;
        }
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        const Eigen::VectorXd jtr = jac.transpose() * residual;
        bool improved = false;
        for (int attempt = 0; attempt < 12; ++attempt) {
            Eigen::MatrixXd damped = jtj;
            damped.diagonal().array() += lambda * (jtj.diagonal().array() + 1e-12);
            const Eigen::VectorXd delta = damped.ldlt().solve(jtr);
            const Eigen::VectorXd trial = params + delta;
            const double trial_cost = rss(model, trial, x, y);
            if (trial_cost < cost) {
                params = trial;
                cost = trial_cost;
                lambda = std::max(lambda * 0.3, 1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if (!improved) break;
        if (cost < 1e-24) break;
    }
    fill_diag(diag, cost, iter, y);
    return params;
}

double dominant_frequency(const std::vector<double>& x, const std::vector<double>& y) {
    const double span = x.back() - x.front();
    if (span <= 0) return 0;
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
    double best_f = 0, best_power = -1;
    const int nf = 4 * int(x.size());
    const double fmax = 0.5 * x.size() / span;  // Nyquist-like bound
    for (int j = 1; j <= nf; ++j) {
        const double f = fmax * j / nf;
        std::complex<double> acc = 0;
        for (size_t k = 0; k < x.size(); ++k)
            acc += (y[k] - mean) *
                   std::exp(std::complex<double>(0, -2.0 * M_PI * f * x[k]));
        if (std::norm(acc) > best_power) {
            best_power = std::norm(acc);
            best_f = f;
        }
    }
    return best_f;
}

CosineFit fit_cosine(const std::vector<double>& x, const std::vector<double>& y,
                     double freq_hint) {
    const double f0 = freq_hint > 0 ? freq_hint : dominant_frequency(x, y);
    const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
    Eigen::VectorXd p0(4);
    p0 << 0.5 * (*ymax - *ymin), f0, 0.0, 0.5 * (*ymax + *ymin);
    auto model = [](const Eigen::VectorXd& p, double t) {
        return p(3) + p(0) * std::cos(2.0 * M_PI * p(1) * t + p(2));
    };
    CosineFit fit;
    const Eigen::VectorXd p = levenberg_marquardt(model, x, y, p0, &fit.diag);
    fit.amplitude = p(0);
    fit.freq = p(1);
    fit.phase = p(2);
    fit.offset = p(3);
    if (fit.amplitude < 0) {  // canonicalize
        fit.amplitude = -fit.amplitude;
        fit.phase += M_PI;
    }
    fit.freq = std::abs(fit.freq);
    return fit;
}

GaussianFit fit_gaussian(const std::vector<double>& x, const std::vector<double>& y) {
    // Seed from the extremum and second moment around it.
    const auto [ymin_it, ymax_it] = std::minmax_element(y.begin(), y.end());
    const size_t imax = size_t(ymax_it - y.begin());
    const double span = std::abs(x.back() - x.front());
    Eigen::VectorXd p0(4);
    p0 << *ymax_it - *ymin_it, x[imax], 0.25 * span, *ymin_it;
    auto model = [](const Eigen::VectorXd& p, double t) {
        const double z = (t - p(1)) / p(2);
        return p(3) + p(0) * std::exp(-0.5 * z * z);
    };
    GaussianFit fit;
    const Eigen::VectorXd p = levenberg_marquardt(model, x, y, p0, &fit.diag);
    fit.a = p(0);
    fit.center = p(1);
    fit.width = std::abs(p(2));
    fit.b = p(3);
    return fit;
}

DecayFit fit_decay(const std::vector<double>& m, const std::vector<double>& y) {
    if (m.size() < 3) throw FitFailure("need at least 3 sequence lengths");
    // For fixed u the problem is linear in (A, B); golden-section search on u.
    auto cost_ab = [&](double u, double* a_out, double* b_out) {
        double s1 = 0, su = 0, suu = 0, sy = 0, suy = 0;
        for (size_t k = 0; k < m.size(); ++k) {
            const double um = std::pow(u, m[k]);
            s1 += 1;
            su += um;
            suu += um * um;
            sy += y[k];
            suy += um * y[k];
        }
        const double det = s1 * suu - su * su;
        double a, b;
        if (std::abs(det) < 1e-14) {
            a = sy / s1;
            b = 0;
        } else {
            a = (sy * suu - su * suy) / det;
            b = (s1 * suy - su * sy) / det;
        }
        double cost = 0;
        for (size_t k = 0; k < m.size(); ++k) {
            const double r = y[k] - (a + b * std::pow(u, m[k]));
            cost += r * r;
        }
        if (a_out) *a_out = a;
        if (b_out) *b_out = b;
        return cost;
    };
    // The cost is not unimodal in u (a near-unity u with huge |A|, |B| can
    // mimic any slowly curving trace), so locate the global basin on a dense
    // grid before polishing with golden-section.
    double best_u = 0.5, best_cost = std::numeric_limits<double>::infinity();
    const int grid_n = 2000;
    for (int k = 1; k < grid_n; ++k) {
        const double u = static_cast<double>(k) / grid_n;
        const double cost = cost_ab(u, nullptr, nullptr);
        if (cost < best_cost) {
            best_cost = cost;
            best_u = u;
        }
    }
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double lo = std::max(1e-6, best_u - 1.0 / grid_n);
    double hi = std::min(1.0 - 1e-12, best_u + 1.0 / grid_n);
    double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
    double fc = cost_ab(c, nullptr, nullptr), fd = cost_ab(d, nullptr, nullptr);
    for (int iter = 0; iter < 200; ++iter) {
        if (fc < fd) {
            hi = d;
            d = c;
            fd = fc;
            c = hi - gr * (hi - lo);
            fc = cost_ab(c, nullptr, nullptr);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + gr * (hi - lo);
            fd = cost_ab(d, nullptr, nullptr);
        }
        if (hi - lo < 1e-14) break;
    }
    DecayFit fit;
    fit.u = 0.5 * (lo + hi);
    const double cost = cost_ab(fit.u, &fit.a, &fit.b);
    fill_diag(&fit.diag, cost, 0, y);
    if (fit.b <= 0 || fit.u >= 1.0 - 1e-12)
        throw FitFailure("data does not decay");
    return fit;
}

}  // namespace fluxsim
