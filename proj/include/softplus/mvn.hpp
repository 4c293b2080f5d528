#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "softplus/error.hpp"
#include "softplus/rng.hpp"

namespace softplus::dist {

/// Draw from Normal(precision^-1 * linear, precision^-1) through the Cholesky
/// factor precision = L L'. The mean solves L L' mu = linear and the noise is
/// L'^-1 z, so the inverse is never formed. A failed factorization retries with
/// diagonal jitter 1e-8 * mean(diag), doubling the multiplier, up to three times.
inline Eigen::VectorXd sample_mvn_precision(const Eigen::MatrixXd& precision, const Eigen::VectorXd& linear,
                                            RngStream& rng) {
    const Eigen::Index n = precision.rows();
    if (precision.cols() != n || linear.size() != n) {
        throw ParameterError("sample_mvn_precision: precision must be square and match the linear term");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) {
        const double mean_diag = precision.diagonal().mean();
        const double base = 1e-8 * (mean_diag > 0.0 ? mean_diag : 1.0);
        bool ok = false;
        for (int attempt = 0; attempt < 3 && !ok; ++attempt) {
            Eigen::MatrixXd jittered = precision;
            jittered.diagonal().array() += base * static_cast<double>(1 << attempt);
            llt.compute(jittered);
            ok = llt.info() == Eigen::Success;
        }
        if (!ok) throw NumericalError("sample_mvn_precision: precision matrix is singular");
    }
    Eigen::VectorXd mean = llt.solve(linear);
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
    llt.matrixU().solveInPlace(z);
    return mean + z;
}

}  // namespace softplus::dist
