#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "quadfun/basis.hpp"
#include "quadfun/errors.hpp"
#include "quadfun/estimated_basis.hpp"
#include "quadfun/pilots.hpp"
#include "quadfun/regressors.hpp"

namespace quadfun {

/// Which covariates define the empirical inner product of the estimated basis.
enum class BasisMode { test_fold, aux_fold };

inline std::string to_string(BasisMode mode) {
    return mode == BasisMode::test_fold ? "test" : "aux";
}

/// Residual regressors fitted on one auxiliary fold.
struct FittedEnsemble {
    FoldId fold;
    std::vector<Predictor> predictors;
    std::vector<std::string> labels;
};

/// Regresses the residuals A - b_hat(X) of the auxiliary fold on X with every
/// regressor of the menu. b_hat must come from a different fold.
inline FittedEnsemble fit_ensemble(std::span<const RegressorSpec> menu, const PairedSample& aux,
                                   const PilotRegression& b_hat) {
    require_independent(b_hat.fold(), aux.fold, "residual pilot and ensemble fold");
    if (aux.size() < 2) {
        throw DomainError("ensemble fitting needs at least 2 auxiliary observations");
    }
    std::vector<double> residuals(aux.size());
    for (std::size_t i = 0; i < aux.size(); ++i) {
        residuals[i] = aux.a[i] - b_hat(aux.x[i]);
    }
    FittedEnsemble out;
    out.fold = aux.fold;
    for (const auto& spec : menu) {
        out.predictors.push_back(fit_regressor(spec, aux.x, residuals));
        out.labels.push_back(spec.label());
    }
    return out;
}

struct FixedPrefix {
    FixedBasis basis;
    std::size_t count = 0;
};

/// Orthonormalizes [fixed prefix ++ predictors] under the empirical inner product
/// of `sample`. In test_fold mode the sample must be disjoint from the fold the
/// predictors were trained on; aux_fold mode uses that same fold.
inline EstimatedBasis build_estimated_basis(const FittedEnsemble& ensemble, const CovariateSample& sample,
                                            const std::optional<FixedPrefix>& concat = std::nullopt,
                                            double drop_tol = kDefaultDropTolerance,
                                            BasisMode mode = BasisMode::test_fold) {
    if (mode == BasisMode::test_fold) {
        require_independent(ensemble.fold, sample.fold, "ensemble predictors and test sample");
    } else if (ensemble.fold != sample.fold) {
        throw FoldViolation("aux_fold mode orthonormalizes on the ensemble's own fold");
    }
    std::vector<Predictor> dictionary;
    if (concat) {
        if (concat->count > concat->basis.size()) {
            throw DomainError("fixed prefix longer than its basis");
        }
        for (std::size_t j = 1; j <= concat->count; ++j) {
            dictionary.emplace_back([basis = concat->basis, j](double x) { return basis(j, x); });
        }
    }
    dictionary.insert(dictionary.end(), ensemble.predictors.begin(), ensemble.predictors.end());
    return orthonormalize(std::move(dictionary), sample.x, drop_tol);
}

/// Max absolute entry of (empirical Gram - identity).
inline double gram_deviation(const EstimatedBasis& basis) {
    const Eigen::MatrixXd gram = basis.empirical_gram();
    return (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

}  // namespace quadfun
