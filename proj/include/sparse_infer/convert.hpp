#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sparse_infer/sparse.hpp"
#include "sparse_infer/tensor.hpp"

namespace sparse_infer {

// Drops exact zeros; every order is supported.
SparseTensor3 sparsify_tensor3(const DenseTensor3& t, AxisOrder3 order);
DenseTensor3 densify_tensor3(const SparseTensor3View& t);
inline DenseTensor3 densify_tensor3(const SparseTensor3& t) { return densify_tensor3(t.view()); }

SparseMatrix sparsify_matrix(const DenseMatrix& m, AxisOrder2 order);
DenseMatrix densify_matrix(const SparseMatrix& m);

SparseTensor4 sparsify_filters(std::span<const DenseTensor3> filters, AxisOrder3 order);
std::vector<DenseTensor3> densify_filters(const SparseTensor4& filters);

std::size_t count_nonzero(std::span<const float> values);

double density(const DenseTensor3& t);
double density(const SparseTensor3View& t);
inline double density(const SparseTensor3& t) { return density(t.view()); }
double density(const SparseTensor4& t);

// Number of entries kept for a target density: round-half-up of density * total.
std::size_t kept_count(double target_density, std::size_t total);

// Keeps a uniformly random subset of kept_count(target_density, size) entries and
// zeroes the rest. Deterministic in seed.
DenseTensor3 prune_random(const DenseTensor3& t, double target_density, std::uint64_t seed);
// A filter set is pruned as one population of N*C*H*W entries.
std::vector<DenseTensor3> prune_random(std::span<const DenseTensor3> filters, double target_density,
                                       std::uint64_t seed);
SparseTensor4 prune_random(const SparseTensor4& filters, double target_density, std::uint64_t seed);

}  // namespace sparse_infer
