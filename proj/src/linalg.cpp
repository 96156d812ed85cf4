#include "panelcf/linalg.hpp"

#include <Eigen/SVD>

namespace panelcf {

namespace {

void orient_signs(Eigen::MatrixXd& U, Eigen::MatrixXd& V) {
  for (Eigen::Index k = 0; k < U.cols(); ++k) {
    Eigen::Index imax = 0;
    double amax = -1.0;
    for (Eigen::Index i = 0; i < U.rows(); ++i) {
      const double a = std::abs(U(i, k));
      if (a > amax) {
        amax = a;
        imax = i;
      }
    }
    if (U(imax, k) < 0.0) {
      U.col(k) = -U.col(k);
      V.col(k) = -V.col(k);
    }
  }
}

}  // namespace

SvdResult svd_thin(const Eigen::MatrixXd& A) {
  SvdResult out;
  if (std::min(A.rows(), A.cols()) <= 16) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.U = svd.matrixU();
    out.s = svd.singularValues();
    out.V = svd.matrixV();
  } else {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.U = svd.matrixU();
    out.s = svd.singularValues();
    out.V = svd.matrixV();
  }
  orient_signs(out.U, out.V);
  return out;
}

Eigen::VectorXd singular_values(const Eigen::MatrixXd& A) {
  if (std::min(A.rows(), A.cols()) <= 16) {
    return Eigen::JacobiSVD<Eigen::MatrixXd>(A).singularValues();
  }
  return Eigen::BDCSVD<Eigen::MatrixXd>(A).singularValues();
}

double nuclear_norm(const Eigen::MatrixXd& A) {
  return singular_values(A).sum();
}

Eigen::MatrixXd masked_two_way_demean(Eigen::MatrixXd M,
                                      const Eigen::ArrayXXd& mask,
                                      const Eigen::VectorXd& row_count,
                                      const Eigen::VectorXd& col_count,
                                      bool rows, bool cols, double tol) {
  if (!rows && !cols) return M;
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  for (int sweep = 0; sweep < 2000; ++sweep) {
    double moved = 0.0;
    if (rows) {
      Eigen::VectorXd m = M.rowwise().sum();
      for (int i = 0; i < m.size(); ++i)
        m[i] = row_count[i] > 0 ? m[i] / row_count[i] : 0.0;
      M -= (m * Eigen::RowVectorXd::Ones(M.cols())).cwiseProduct(mask.matrix());
      moved = std::max(moved, m.cwiseAbs().maxCoeff());
    }
    if (cols) {
      Eigen::RowVectorXd m = M.colwise().sum();
      for (int t = 0; t < m.size(); ++t)
        m[t] = col_count[t] > 0 ? m[t] / col_count[t] : 0.0;
      M -= (Eigen::VectorXd::Ones(M.rows()) * m).cwiseProduct(mask.matrix());
      moved = std::max(moved, m.cwiseAbs().maxCoeff());
    }
    if (moved < tol * scale) break;
  }
  return M;
}

}  // namespace panelcf
