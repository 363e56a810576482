#include "fino/matrix.hpp"

#include <stdexcept>

namespace fino {

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.cols() != b.rows()) throw std::invalid_argument("gemm_nn: inner dims differ");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  c.resize(m, n);
  if (!accumulate) c.set_zero();
  for (int i = 0; i < m; ++i) {
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b.row(p);
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.rows() != b.rows()) throw std::invalid_argument("gemm_tn: inner dims differ");
  const int k = a.rows(), m = a.cols(), n = b.cols();
  c.resize(m, n);
  if (!accumulate) c.set_zero();
  for (int p = 0; p < k; ++p) {
    const double* ap = a.row(p);
    const double* bp = b.row(p);
    for (int i = 0; i < m; ++i) {
      const double api = ap[i];
      double* ci = c.row(i);
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

void transpose(const Matrix& a, Matrix& out) {
  out.resize(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i);
    for (int j = 0; j < a.cols(); ++j) out(j, i) = ai[j];
  }
}

}  // namespace fino
