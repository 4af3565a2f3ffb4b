#pragma once

#include <cstddef>
#include <vector>

namespace featlab {

// Eigenvalues (ascending) of a symmetric n x n row-major matrix. Closed form
// for n <= 2, cyclic Jacobi rotations otherwise.
std::vector<double> symmetric_eigenvalues(const std::vector<double>& a, std::size_t n);

}  // namespace featlab
