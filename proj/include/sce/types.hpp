// Shared dense types and symmetric-matrix vectorization helpers.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace sce {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Real = double;
using MatX = Mat<Real>;
using VecX = Vec<Real>;
using Index = Eigen::Index;

inline constexpr Real kSqrt2 = 1.4142135623730950488;

/// Length of the scaled upper-triangular vectorization of a symmetric n x n matrix.
inline Index svec_size(Index n) { return n * (n + 1) / 2; }

/// Position of entry (i,j), i <= j, in column-major upper-triangle order.
inline Index svec_index(Index i, Index j) { return j * (j + 1) / 2 + i; }

/// svec(S): diagonal entries kept, off-diagonal entries scaled by sqrt(2),
/// so that svec(A).dot(svec(B)) equals the trace inner product <A,B>.
template <class T>
Vec<T> matrix_to_svec(const Mat<T>& s) {
  const Index n = s.rows();
  Vec<T> v(svec_size(n));
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i <= j; ++i) v[svec_index(i, j)] = (i == j) ? s(i, j) : T(kSqrt2) * s(i, j);
  return v;
}

template <class T>
Mat<T> svec_to_matrix(const Vec<T>& v, Index n) {
  Mat<T> s(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i <= j; ++i) {
      const T x = (i == j) ? v[svec_index(i, j)] : v[svec_index(i, j)] / T(kSqrt2);
      s(i, j) = x;
      s(j, i) = x;
    }
  return s;
}

}  // namespace sce
