#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace fluxsim {

struct FitFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FitDiagnostics {
    double residual_norm = 0;  // rms residual
    int iterations = 0;
    double r_squared = 0;
};

/// Damped least squares with a forward-difference Jacobian.
/// `model(params, x)` evaluates the model at one abscissa.
Eigen::VectorXd levenberg_marquardt(
    const std::function<double(const Eigen::VectorXd&, double)>& model,
    const std::vector<double>& x, const std::vector<double>& y,
    Eigen::VectorXd initial, FitDiagnostics* diag = nullptr, int max_iter = 200);

/// y = offset + amplitude * cos(2*pi*freq*x + phase).
struct CosineFit {
    double amplitude = 0, freq = 0, phase = 0, offset = 0;
    FitDiagnostics diag;
};
CosineFit fit_cosine(const std::vector<double>& x, const std::vector<double>& y,
                     double freq_hint = 0);

/// y = a * exp(-(x - center)^2 / (2 width^2)) + b.
struct GaussianFit {
    double a = 0, center = 0, width = 0, b = 0;
    FitDiagnostics diag;
};
GaussianFit fit_gaussian(const std::vector<double>& x, const std::vector<double>& y);

/// y = A + B * u^m over integer-like sequence lengths m.
struct DecayFit {
    double a = 0, b = 0, u = 0;
    FitDiagnostics diag;
};
DecayFit fit_decay(const std::vector<double>& m, const std::vector<double>& y);

/// Seed frequency estimate via a dense DFT scan (data sets here are small).
double dominant_frequency(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace fluxsim
