#pragma once

#include <cstddef>

namespace hcam::detail {

/// C (m x n) = op(A) * op(B) (+ C when accumulate). All row-major.
/// op(A) is m x k, op(B) is k x n.
void gemm(const double* a, const double* b, double* c, std::size_t m,
          std::size_t k, std::size_t n, bool trans_a, bool trans_b,
          bool accumulate);

}  // namespace hcam::detail
