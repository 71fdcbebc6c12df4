#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace dedtwin {

struct CgResult {
    int iterations = 0;
    double relative_residual = 0.0;
    bool converged = false;
};

/// Preconditioned conjugate gradients for a symmetric positive definite operator
/// given as apply(x, y) computing y = A x, with precondition(r, z) computing z = M^-1 r.
/// `x` holds the initial guess.
template <typename Apply, typename Precondition>
CgResult preconditioned_cg(Apply&& apply, Precondition&& precondition, const Eigen::VectorXd& b,
                           Eigen::VectorXd& x, double rel_tol, int max_iters) {
    CgResult res;
    const double bnorm = b.norm();
    if (bnorm == 0.0) {
        x.setZero();
        res.converged = true;
        return res;
    }
    Eigen::VectorXd r(b.size()), ap(b.size()), z(b.size());
    apply(x, ap);
    r = b - ap;
    res.relative_residual = r.norm() / bnorm;
    if (res.relative_residual <= rel_tol) {
        res.converged = true;
        return res;
    }
    precondition(r, z);
    Eigen::VectorXd p = z;
    double rz = r.dot(z);
    for (int it = 1; it <= max_iters; ++it) {
        apply(p, ap);
        const double pap = p.dot(ap);
        if (!(pap > 0.0)) break;
        const double alpha = rz / pap;
        x += alpha * p;
        r -= alpha * ap;
        res.iterations = it;
        res.relative_residual = r.norm() / bnorm;
        if (res.relative_residual <= rel_tol) {
            res.converged = true;
            return res;
        }
        precondition(r, z);
        const double rz_new = r.dot(z);
        p = z + (rz_new / rz) * p;
        rz = rz_new;
    }
    return res;
}

/// Jacobi-preconditioned variant.
template <typename Apply>
CgResult conjugate_gradient(Apply&& apply, const Eigen::VectorXd& diagonal, const Eigen::VectorXd& b,
                            Eigen::VectorXd& x, double rel_tol, int max_iters) {
    return preconditioned_cg(
        apply, [&diagonal](const Eigen::VectorXd& r, Eigen::VectorXd& z) { z = r.cwiseQuotient(diagonal); }, b, x,
        rel_tol, max_iters);
}

}  // namespace dedtwin
