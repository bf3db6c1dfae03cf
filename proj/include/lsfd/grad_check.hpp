#pragma once

#include "lsfd/tensor.hpp"

#include <functional>

namespace lsfd {

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Max elementwise relative error between the autodiff gradient of `f` at `x`
/// and central finite differences with the given step. The denominator of
/// each relative error is max(|g|, |g_fd|, 1e-8).
///
/// `x` is copied; the caller's tensor is left untouched.
double grad_check(const ScalarFn& f, const Tensor& x, double step = 1e-5);

}  // namespace lsfd
