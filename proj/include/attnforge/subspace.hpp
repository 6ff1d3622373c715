#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "attnforge/tensor.hpp"
#include "attnforge/transformer.hpp"

namespace attnforge {

// Structured random projection from a small subspace (dimension d) into the
// ambient parameter space (dimension D). Applied matrix-free through a
// sign diagonal, Walsh-Hadamard transform, permutation, Gaussian diagonal and
// second Walsh-Hadamard transform over a power-of-two padding, then truncated
// back to D. Columns are normalized to exactly unit length by measuring each
// basis image once at build time, so the map stays O(D' log D') per use.
struct FastfoodProjection {
  int ambient = 0;   // D
  int subspace = 0;  // d
  int padded = 0;    // D', smallest power of two >= D
  bool dense_identity = false;
  std::uint64_t seed = 0;

  std::vector<double> sign;      // D' entries of +-1
  std::vector<int> perm;         // D' permutation
  std::vector<double> gauss;     // D' standard normals
  std::vector<double> col_norm;  // d per-column normalizers

  // d == D pass-through (for comparing against direct training)
  static FastfoodProjection identity(int dim);

  std::vector<double> apply(const std::vector<double>& theta) const;          // d -> D
  std::vector<double> apply_transpose(const std::vector<double>& grad) const; // D -> d

  // explicit D x d matrix with the same columns; tests and small problems only
  Tensor materialize_matrix() const;
};

FastfoodProjection build_projection(int ambient, int subspace, std::uint64_t seed);

enum class SubspaceGroup { attention, mlp, all };

// Reparameterizes a group of live tensors as theta0 + P theta. The group
// tensors become plain buffers: materialize() overwrites their values, and
// pull_theta_grad() folds their gradients into theta's gradient and clears
// them, so an optimizer only ever touches theta.
struct SubspaceHandle {
  FastfoodProjection projection;
  std::vector<Tensor> group;
  std::vector<double> theta0;  // flattened snapshot, length D
  Tensor theta;                // length d, requires_grad

  // write theta0 + P theta into the group tensors
  void materialize();

  // theta.grad += P^T (flattened group gradients); zeroes the group gradients
  void pull_theta_grad();
};

SubspaceHandle attach_subspace(std::vector<Tensor> group, FastfoodProjection projection);

// the live tensors a (group, layers) selection covers, in a fixed order;
// summing their sizes gives the ambient dimension a projection must match
std::vector<Tensor> subspace_group_tensors(VitModel& model, SubspaceGroup group,
                                           const std::vector<int>& layers);

// layer-selected parameter groups of a transformer; layers lists layer indices
SubspaceHandle attach_subspace(VitModel& model, SubspaceGroup group,
                               const std::vector<int>& layers, FastfoodProjection projection);

struct IntrinsicSearchRow {
  int d = 0;
  double accuracy = 0.0;
  bool qualified = false;
};

struct IntrinsicSearchResult {
  bool reached = false;
  int d_t = -1;  // smallest qualifying grid point; -1 when none qualifies
  double reference = 0.0;
  double threshold = 0.0;
  std::vector<IntrinsicSearchRow> rows;  // evaluated grid points in order
};

// Walks the ascending grid, calling run_subspace(d) for the held-out accuracy
// at that subspace size, and stops at the first d whose accuracy reaches
// threshold * reference_accuracy.
IntrinsicSearchResult intrinsic_dim_search(const std::function<double(int)>& run_subspace,
                                           const std::vector<int>& d_grid, double threshold,
                                           double reference_accuracy);

}  // namespace attnforge
