#include "lsfd/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace lsfd {

double grad_check(const ScalarFn& f, const Tensor& x, double step) {
  Tensor leaf(x.shape(), x.data(), true);
  Tensor y = f(leaf);
  if (y.size() != 1) throw Error(ErrorCode::Shape, "grad_check: f must be scalar-valued");
  backward(y);
  const Vector analytic = leaf.has_grad() ? leaf.grad() : Vector::Zero(leaf.size());

  NoGradGuard no_grad;
  Vector& v = leaf.mutable_data();
  double worst = 0.0;
  for (Index i = 0; i < v.size(); ++i) {
    const double saved = v[i];
    v[i] = saved + step;
    const double up = f(leaf).item();
    v[i] = saved - step;
    const double down = f(leaf).item();
    v[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace lsfd
