#include "bamifun/rng.hpp"

namespace bamifun {

Eigen::MatrixXd Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd z(rows, cols);
  // Column-major fill so the stream order is fixed regardless of Eigen internals.
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) z(i, j) = normal();
  }
  return z;
}

}  // namespace bamifun
