#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "quadfun/basis.hpp"
#include "quadfun/dgp.hpp"
#include "quadfun/errors.hpp"

namespace quadfun {

/// Identifies the fold a sample or fitted nuisance came from. Pilots constructed
/// directly from coefficients carry the external fold, which touches no data.
class FoldId {
public:
    constexpr FoldId() = default;
    constexpr explicit FoldId(int value) : value_(value) {}

    static constexpr FoldId external() { return FoldId(); }

    constexpr bool is_external() const noexcept { return value_ < 0; }
    constexpr int value() const noexcept { return value_; }

    friend constexpr auto operator<=>(FoldId, FoldId) = default;

private:
    int value_ = -1;
};

/// Two folds are independent unless they name the same data fold.
constexpr bool independent(FoldId a, FoldId b) noexcept {
    return a.is_external() || b.is_external() || a != b;
}

inline void require_independent(FoldId a, FoldId b, const char* what) {
    if (!independent(a, b)) {
        throw FoldViolation(std::string("fold discipline violated: ") + what + " share fold " +
                            std::to_string(a.value()));
    }
}

struct CovariateSample {
    FoldId fold;
    std::vector<double> x;
};

struct PairedSample {
    FoldId fold;
    std::vector<double> x;
    std::vector<double> a;

    std::size_t size() const noexcept { return x.size(); }
};

/// Series density estimate p_hat = sum_{j<=J} theta_hat_j phi_j over the cosine basis.
/// Not constrained to be a density: corrupted pilots may go negative.
class PilotDensity {
public:
    PilotDensity(std::vector<double> coefficients, FoldId fold)
        : theta_(std::move(coefficients)), fold_(fold), perturbation_(theta_.size(), 0.0) {
        if (theta_.empty()) {
            throw DomainError("pilot density needs J >= 1");
        }
        for (double t : theta_) {
            if (!std::isfinite(t)) {
                throw DomainError("pilot density coefficients must be finite");
            }
        }
    }

    std::span<const double> coefficients() const noexcept { return theta_; }
    std::size_t J() const noexcept { return theta_.size(); }
    FoldId fold() const noexcept { return fold_; }
    /// Perturbation added by corrupt_pilot, zero for clean fits.
    std::span<const double> perturbation() const noexcept { return perturbation_; }

    double operator()(double x) const { return cosine_series(theta_, x); }

    friend PilotDensity corrupt_pilot(const PilotDensity& pilot, std::span<const double> deltas);

private:
    std::vector<double> theta_;
    FoldId fold_;
    std::vector<double> perturbation_;
};

/// theta_hat_j = (1/m) sum_i phi_j(X_i), j = 1..J.
inline PilotDensity fit_series_density(const CovariateSample& aux, std::size_t J) {
    if (aux.x.empty()) {
        throw DomainError("fit_series_density needs a nonempty auxiliary sample");
    }
    if (J == 0) {
        throw DomainError("truncation level J must be >= 1");
    }
    const FixedBasis basis(BasisKind::cosine, J);
    std::vector<double> theta(J, 0.0);
    std::vector<double> phi(J);
    for (double x : aux.x) {
        basis.values(x, phi);
        for (std::size_t j = 0; j < J; ++j) {
            theta[j] += phi[j];
        }
    }
    for (auto& t : theta) {
        t /= static_cast<double>(aux.x.size());
    }
    return PilotDensity(std::move(theta), aux.fold);
}

/// Returns a copy with theta_hat_j += delta_j. The fold is preserved and the
/// cumulative perturbation recorded.
inline PilotDensity corrupt_pilot(const PilotDensity& pilot, std::span<const double> deltas) {
    if (deltas.size() > pilot.J()) {
        throw DomainError("more perturbations (" + std::to_string(deltas.size()) +
                          ") than pilot coefficients (" + std::to_string(pilot.J()) + ")");
    }
    PilotDensity out = pilot;
    for (std::size_t j = 0; j < deltas.size(); ++j) {
        out.theta_[j] += deltas[j];
        out.perturbation_[j] += deltas[j];
    }
    return out;
}

/// Jump of size `height` switched on for x >= at. Lets a regression pilot carry
/// error outside the cosine span.
struct StepPerturbation {
    double at = 0.5;
    double height = 0.0;
};

/// Least-squares coefficients of y on (phi_1..phi_J)(x): (G + ridge I) c = g.
inline std::vector<double> fit_series_coefficients(std::span<const double> x,
                                                   std::span<const double> y, std::size_t J,
                                                   double ridge) {
    if (x.size() != y.size()) {
        throw DomainError("regression inputs differ in length");
    }
    if (J == 0) {
        throw DomainError("truncation level J must be >= 1");
    }
    if (x.empty()) {
        throw DomainError("regression needs data");
    }
    const auto k = static_cast<Eigen::Index>(J);
    const FixedBasis basis(BasisKind::cosine, J);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd cross = Eigen::VectorXd::Zero(k);
    std::vector<double> phi(J);
    for (std::size_t i = 0; i < x.size(); ++i) {
        basis.values(x[i], phi);
        const Eigen::Map<const Eigen::VectorXd> v(phi.data(), k);
        gram.noalias() += v * v.transpose();
        cross += y[i] * v;
    }
    const double m = static_cast<double>(x.size());
    gram /= m;
    cross /= m;
    gram.diagonal().array() += ridge;
    const Eigen::LDLT<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success || !solver.isPositive()) {
        throw FitError("series regression system is singular beyond ridge rescue");
    }
    const Eigen::VectorXd c = solver.solve(cross);
    if (!c.allFinite() || ((gram * c - cross).norm() > 1e-6 * (1.0 + cross.norm()))) {
        throw FitError("series regression system is singular beyond ridge rescue");
    }
    return {c.data(), c.data() + c.size()};
}

/// Regression pilot pi_hat(x) = clamp(sum_j c_j phi_j(x) + steps(x), eps, 1 - eps).
class PilotRegression {
public:
    PilotRegression(std::vector<double> coefficients, FoldId fold, double clip = kDefaultClip,
                    std::vector<StepPerturbation> steps = {})
        : coefficients_(std::move(coefficients)),
          clip_(clip),
          fold_(fold),
          steps_(std::move(steps)),
          perturbation_(coefficients_.size(), 0.0) {
        if (coefficients_.empty()) {
            throw DomainError("regression pilot needs J >= 1");
        }
        if (!(clip_ > 0.0 && clip_ < 0.5)) {
            throw DomainError("clip must lie in (0, 1/2)");
        }
    }

    /// The propensity itself, viewed as a pilot.
    static PilotRegression from_model(const PropensityModel& model) {
        const auto c = model.coefficients();
        return PilotRegression({c.begin(), c.end()}, FoldId::external(), model.clip());
    }

    std::span<const double> coefficients() const noexcept { return coefficients_; }
    std::size_t J() const noexcept { return coefficients_.size(); }
    double clip() const noexcept { return clip_; }
    FoldId fold() const noexcept { return fold_; }
    std::span<const StepPerturbation> steps() const noexcept { return steps_; }
    std::span<const double> perturbation() const noexcept { return perturbation_; }

    double raw(double x) const {
        double v = cosine_series(coefficients_, x);
        for (const auto& s : steps_) {
            if (x >= s.at) {
                v += s.height;
            }
        }
        return v;
    }

    double operator()(double x) const { return std::clamp(raw(x), clip_, 1.0 - clip_); }

    bool clipping_binds() const {
        const double step = 1.0 / static_cast<double>(kVerificationGridSize - 1);
        for (std::size_t i = 0; i < kVerificationGridSize; ++i) {
            const double r = raw(step * static_cast<double>(i));
            if (r < clip_ || r > 1.0 - clip_) {
                return true;
            }
        }
        return false;
    }

    /// Jump locations in (0,1), for piecewise quadrature.
    std::vector<double> breakpoints() const {
        std::vector<double> cuts;
        for (const auto& s : steps_) {
            if (s.at > 0.0 && s.at < 1.0) {
                cuts.push_back(s.at);
            }
        }
        std::sort(cuts.begin(), cuts.end());
        cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
        return cuts;
    }

    friend PilotRegression corrupt_pilot(const PilotRegression& pilot,
                                         std::span<const double> deltas,
                                         std::span<const StepPerturbation> steps);

private:
    std::vector<double> coefficients_;
    double clip_;
    FoldId fold_;
    std::vector<StepPerturbation> steps_;
    std::vector<double> perturbation_;
};

inline PilotRegression fit_series_regression(const PairedSample& aux, std::size_t J,
                                             double ridge = 1e-8, double clip = kDefaultClip) {
    if (aux.size() <= J) {
        throw DomainError("series regression needs more than J = " + std::to_string(J) +
                          " observations");
    }
    return PilotRegression(fit_series_coefficients(aux.x, aux.a, J, ridge), aux.fold, clip);
}

inline PilotRegression corrupt_pilot(const PilotRegression& pilot, std::span<const double> deltas,
                                     std::span<const StepPerturbation> steps = {}) {
    if (deltas.size() > pilot.J()) {
        throw DomainError("more perturbations (" + std::to_string(deltas.size()) +
                          ") than pilot coefficients (" + std::to_string(pilot.J()) + ")");
    }
    PilotRegression out = pilot;
    for (std::size_t j = 0; j < deltas.size(); ++j) {
        out.coefficients_[j] += deltas[j];
        out.perturbation_[j] += deltas[j];
    }
    out.steps_.insert(out.steps_.end(), steps.begin(), steps.end());
    return out;
}

}  // namespace quadfun
