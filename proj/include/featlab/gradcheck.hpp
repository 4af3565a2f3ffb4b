#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace featlab {

// Relative error |a - n| / max(|a|, |n|, tau) with tau = 1e-3 * max_k |n_k|, so
// entries that are numerically zero do not dominate. Central differences, h = 1e-5.
struct GradcheckResult {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t n_params = 0;
};

double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric);

std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = 1e-5);

// ERM, IRMv1 (lambda in {0, 10, 1e8}) for every activation, and the FeAT objective,
// on random small instances (m=4, d=8, n=32, h=8).
std::vector<GradcheckResult> gradcheck_suite(std::uint64_t seed);

}  // namespace featlab
