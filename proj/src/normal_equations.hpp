#pragma once

#include <Eigen/Dense>

namespace rsens::detail {

// Least squares through the normal equations. Rank-deficient Gram matrices
// (collinear features, e.g. wealth tied to the state) get the minimum-norm
// solution, which keeps residuals orthogonal to the feature span.
inline Eigen::MatrixXd solve_normal(const Eigen::MatrixXd& gram, const Eigen::MatrixXd& rhs, bool& rank_deficient) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    const auto& ev = es.eigenvalues();
    const double hi = ev.maxCoeff();
    rank_deficient = !(hi > 0.0) || ev.minCoeff() <= 1e-11 * hi;
    if (!rank_deficient) return gram.ldlt().solve(rhs);
    Eigen::VectorXd inv(ev.size());
    for (Eigen::Index i = 0; i < ev.size(); ++i) inv(i) = ev(i) > 1e-11 * hi ? 1.0 / ev(i) : 0.0;
    const Eigen::MatrixXd& v = es.eigenvectors();
    return v * inv.asDiagonal() * (v.transpose() * rhs);
}

}  // namespace rsens::detail
