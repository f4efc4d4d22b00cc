#include "linalg.hpp"

#include <Eigen/Core>

namespace hcam::detail {

namespace {

using RowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

}  // namespace

void gemm(const double* a, const double* b, double* c, std::size_t m,
          std::size_t k, std::size_t n, bool trans_a, bool trans_b,
          bool accumulate) {
  const auto rows = static_cast<Eigen::Index>(m);
  const auto inner = static_cast<Eigen::Index>(k);
  const auto cols = static_cast<Eigen::Index>(n);
  Map out(c, rows, cols);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      out.noalias() += lhs * rhs;
    } else {
      out.noalias() = lhs * rhs;
    }
  };
  if (!trans_a && !trans_b) {
    run(ConstMap(a, rows, inner), ConstMap(b, inner, cols));
  } else if (trans_a && !trans_b) {
    run(ConstMap(a, inner, rows).transpose(), ConstMap(b, inner, cols));
  } else if (!trans_a && trans_b) {
    run(ConstMap(a, rows, inner), ConstMap(b, cols, inner).transpose());
  } else {
    run(ConstMap(a, inner, rows).transpose(),
        ConstMap(b, cols, inner).transpose());
  }
}

}  // namespace hcam::detail
