#pragma once

#include <Eigen/Dense>

namespace panelcf {

struct SvdResult {
  Eigen::MatrixXd U;
  Eigen::VectorXd s;
  Eigen::MatrixXd V;
};

// Thin SVD with a fixed sign convention: each singular pair is oriented so the
// largest-magnitude entry of the left singular vector is positive (first such
// index on ties). Deterministic for identical input bits.
SvdResult svd_thin(const Eigen::MatrixXd& A);

// Singular values only (cheaper; used for nuclear norms and lambda_max).
Eigen::VectorXd singular_values(const Eigen::MatrixXd& A);

double nuclear_norm(const Eigen::MatrixXd& A);

// Iterated two-way demeaning on a mask (alternate row/column means until the
// largest removed mean falls below tol, relative to the matrix scale).
// M must already be zero off the mask; the result stays zero there.
Eigen::MatrixXd masked_two_way_demean(Eigen::MatrixXd M,
                                      const Eigen::ArrayXXd& mask,
                                      const Eigen::VectorXd& row_count,
                                      const Eigen::VectorXd& col_count,
                                      bool rows, bool cols, double tol = 1e-12);

}  // namespace panelcf
