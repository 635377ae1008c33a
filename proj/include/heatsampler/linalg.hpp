#pragma once

#include "heatsampler/errors.hpp"
#include "heatsampler/fields.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace heatsampler {

/// Singular system of an operator between weighted coefficient spaces:
/// A φ_k = μ_k g_k, A* g_k = μ_k φ_k, ⟨φ_k,φ_l⟩_X = ⟨g_k,g_l⟩_Y = δ_kl.
struct SingularSystem {
  Eigen::VectorXd mu;   // descending
  Eigen::MatrixXd phi;  // domain coefficients, one column per k
  Eigen::MatrixXd g;    // codomain coefficients, one column per k
  Eigen::MatrixXd gram_domain;
  Eigen::MatrixXd gram_codomain;
  // Cholesky factor transpose of the codomain Gram, so ⟨r, g_k⟩_Y = (L_Yᵀ r)·u_k
  Eigen::MatrixXd ly_t;
  Eigen::MatrixXd u;

  /// ⟨r, g_k⟩_Y for all k.
  Eigen::VectorXd coefficients(const Eigen::VectorXd& r) const { return u.transpose() * (ly_t * r); }
  double codomain_norm(const Eigen::VectorXd& r) const { return (ly_t * r).norm(); }
  double domain_norm(const Eigen::VectorXd& x) const { return std::sqrt(std::max(0.0, x.dot(gram_domain * x))); }
};

namespace detail {
inline Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& G) {
  Eigen::LLT<Eigen::MatrixXd> llt(G);
  if (llt.info() != Eigen::Success) throw SolverError("Gram matrix is not positive definite");
  return llt.matrixL();
}
}  // namespace detail

inline SingularSystem singular_system(const OperatorMatrix& op) {
  SingularSystem ss;
  ss.gram_domain = op.domain.gram();
  ss.gram_codomain = op.codomain.gram();
  const Eigen::MatrixXd lx = detail::cholesky_lower(ss.gram_domain);
  const Eigen::MatrixXd ly = detail::cholesky_lower(ss.gram_codomain);
  ss.ly_t = ly.transpose();
  // Ã = L_Yᵀ A L_X^{-ᵀ}
  const Eigen::MatrixXd a_lx = lx.triangularView<Eigen::Lower>().solve(op.matrix.transpose()).transpose();
  const Eigen::MatrixXd at = ss.ly_t * a_lx;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(at, Eigen::ComputeThinU | Eigen::ComputeThinV);
  ss.mu = svd.singularValues();
  ss.u = svd.matrixU();
  ss.phi = lx.transpose().triangularView<Eigen::Upper>().solve(svd.matrixV());
  ss.g = ly.transpose().triangularView<Eigen::Upper>().solve(svd.matrixU());
  return ss;
}

/// Largest singular value in the declared norms.
inline double operator_norm(const OperatorMatrix& op) {
  if (op.matrix.size() == 0 || op.matrix.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  const Eigen::MatrixXd lx = detail::cholesky_lower(op.domain.gram());
  const Eigen::MatrixXd ly = detail::cholesky_lower(op.codomain.gram());
  const Eigen::MatrixXd a_lx = lx.triangularView<Eigen::Lower>().solve(op.matrix.transpose()).transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(ly.transpose() * a_lx);
  return svd.singularValues()[0];
}

/// ‖F + A H‖ / ‖F‖ in the declared norms; zero when F vanishes.
inline double verify_factorization(const OperatorMatrix& F, const OperatorMatrix& A, const OperatorMatrix& H) {
  const double nf = operator_norm(F);
  if (nf == 0.0) return 0.0;
  if (A.matrix.cols() != H.matrix.rows() || A.matrix.rows() != F.matrix.rows() || H.matrix.cols() != F.matrix.cols())
    throw ArgumentError("factorization operands have incompatible shapes");
  OperatorMatrix r{"F+AH", F.domain, F.codomain, F.matrix + A.matrix * H.matrix};
  return operator_norm(r) / nf;
}

}  // namespace heatsampler
