#include "attnforge/subspace.hpp"

#include <cmath>
#include <numeric>

#include "attnforge/rng.hpp"

namespace attnforge {

namespace {

int next_pow2(int n) {
  int p = 1;
  while (p < n) p *= 2;
  return p;
}

// in-place unnormalized Walsh-Hadamard transform; size must be a power of two
void wht(std::vector<double>& v) {
  const std::size_t n = v.size();
  for (std::size_t half = 1; half < n; half *= 2)
    for (std::size_t start = 0; start < n; start += 2 * half)
      for (std::size_t i = start; i < start + half; ++i) {
        double a = v[i];
        double b = v[i + half];
        v[i] = a + b;
        v[i + half] = a - b;
      }
}

}  // namespace

FastfoodProjection FastfoodProjection::identity(int dim) {
  if (dim < 1) throw std::invalid_argument("projection: dimension must be >= 1");
  FastfoodProjection p;
  p.ambient = dim;
  p.subspace = dim;
  p.padded = dim;
  p.dense_identity = true;
  p.col_norm.assign(dim, 1.0);
  return p;
}

std::vector<double> FastfoodProjection::apply(const std::vector<double>& theta) const {
  if (static_cast<int>(theta.size()) != subspace)
    throw std::invalid_argument("projection: theta length does not match the subspace dimension");
  if (dense_identity) return theta;
  std::vector<double> buf(padded, 0.0);
  for (int j = 0; j < subspace; ++j) buf[j] = theta[j] / col_norm[j];
  for (int i = 0; i < padded; ++i) buf[i] *= sign[i];
  wht(buf);
  std::vector<double> out(padded);
  for (int i = 0; i < padded; ++i) out[i] = buf[perm[i]];
  for (int i = 0; i < padded; ++i) out[i] *= gauss[i];
  wht(out);
  out.resize(ambient);
  return out;
}

std::vector<double> FastfoodProjection::apply_transpose(const std::vector<double>& grad) const {
  if (static_cast<int>(grad.size()) != ambient)
    throw std::invalid_argument("projection: gradient length does not match the ambient dimension");
  if (dense_identity) return grad;
  std::vector<double> buf(padded, 0.0);
  for (int i = 0; i < ambient; ++i) buf[i] = grad[i];
  wht(buf);
  for (int i = 0; i < padded; ++i) buf[i] *= gauss[i];
  std::vector<double> out(padded);
  for (int i = 0; i < padded; ++i) out[perm[i]] = buf[i];
  wht(out);
  for (int i = 0; i < padded; ++i) out[i] *= sign[i];
  std::vector<double> theta_grad(subspace);
  for (int j = 0; j < subspace; ++j) theta_grad[j] = out[j] / col_norm[j];
  return theta_grad;
}

Tensor FastfoodProjection::materialize_matrix() const {
  Tensor m = Tensor::zeros({ambient, subspace});
  std::vector<double> basis(subspace, 0.0);
  for (int j = 0; j < subspace; ++j) {
    basis[j] = 1.0;
    std::vector<double> col = apply(basis);
    basis[j] = 0.0;
    for (int i = 0; i < ambient; ++i) m.at(i, j) = col[i];
  }
  return m;
}

FastfoodProjection build_projection(int ambient, int subspace, std::uint64_t seed) {
  if (ambient < 1) throw std::invalid_argument("build_projection: ambient dimension must be >= 1");
  if (subspace < 1 || subspace > ambient)
    throw std::invalid_argument("build_projection: need 1 <= subspace <= ambient");
  FastfoodProjection p;
  p.ambient = ambient;
  p.subspace = subspace;
  p.padded = next_pow2(ambient);
  p.seed = seed;
  Rng rng(seed);
  p.sign.resize(p.padded);
  for (double& s : p.sign) s = rng.uniform() < 0.5 ? -1.0 : 1.0;
  p.perm.resize(p.padded);
  std::iota(p.perm.begin(), p.perm.end(), 0);
  rng.shuffle(p.perm);
  p.gauss.resize(p.padded);
  for (double& g : p.gauss) g = rng.normal();

  // measure each raw column once so the exposed columns are exactly unit
  p.col_norm.assign(subspace, 1.0);
  std::vector<double> basis(subspace, 0.0);
  for (int j = 0; j < subspace; ++j) {
    basis[j] = 1.0;
    std::vector<double> col = p.apply(basis);
    basis[j] = 0.0;
    double norm = 0.0;
    for (double v : col) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-12)
      throw std::runtime_error("build_projection: degenerate column, change the seed");
    p.col_norm[j] = norm;
  }
  return p;
}

void SubspaceHandle::materialize() {
  std::vector<double> offset = projection.apply(theta.values());
  std::size_t at = 0;
  for (Tensor& t : group) {
    for (std::size_t i = 0; i < t.numel(); ++i, ++at) t.values()[i] = theta0[at] + offset[at];
  }
}

void SubspaceHandle::pull_theta_grad() {
  std::vector<double> flat(theta0.size(), 0.0);
  std::size_t at = 0;
  for (Tensor& t : group) {
    const std::vector<double>* g = t.grad_if();
    for (std::size_t i = 0; i < t.numel(); ++i, ++at)
      if (g) flat[at] = (*g)[i];
    t.zero_grad();
  }
  std::vector<double> tg = projection.apply_transpose(flat);
  std::vector<double>& dst = theta.grad();
  for (int j = 0; j < projection.subspace; ++j) dst[j] += tg[j];
}

SubspaceHandle attach_subspace(std::vector<Tensor> group, FastfoodProjection projection) {
  if (group.empty()) throw std::invalid_argument("attach_subspace: empty parameter group");
  std::size_t total = 0;
  for (const Tensor& t : group) total += t.numel();
  if (total != static_cast<std::size_t>(projection.ambient))
    throw std::invalid_argument(
        "attach_subspace: projection ambient dimension does not match the group size");
  SubspaceHandle h;
  h.projection = std::move(projection);
  h.group = std::move(group);
  h.theta0.reserve(total);
  for (Tensor& t : h.group) {
    t.set_requires_grad(true);
    h.theta0.insert(h.theta0.end(), t.values().begin(), t.values().end());
  }
  h.theta = Tensor::zeros({h.projection.subspace}, true);
  return h;
}

std::vector<Tensor> subspace_group_tensors(VitModel& model, SubspaceGroup group,
                                           const std::vector<int>& layers) {
  if (layers.empty()) throw std::invalid_argument("subspace group: empty layer selection");
  std::vector<Tensor> tensors;
  for (int l : layers) {
    if (l < 0 || l >= static_cast<int>(model.layers.size()))
      throw std::invalid_argument("subspace group: layer index out of range");
    LayerWeights& lw = model.layers[l];
    if (group == SubspaceGroup::attention || group == SubspaceGroup::all) {
      for (Tensor t : {lw.attn.w_q, lw.attn.b_q, lw.attn.w_k, lw.attn.b_k, lw.attn.w_v,
                       lw.attn.b_v, lw.attn.w_o, lw.attn.b_o})
        tensors.push_back(t);
    }
    if (group == SubspaceGroup::all) {
      for (Tensor t : {lw.ln1_gain, lw.ln1_bias, lw.ln2_gain, lw.ln2_bias}) tensors.push_back(t);
    }
    if (group == SubspaceGroup::mlp || group == SubspaceGroup::all) {
      for (Tensor t : {lw.mlp_w1, lw.mlp_b1, lw.mlp_w2, lw.mlp_b2}) tensors.push_back(t);
    }
  }
  return tensors;
}

SubspaceHandle attach_subspace(VitModel& model, SubspaceGroup group,
                               const std::vector<int>& layers, FastfoodProjection projection) {
  return attach_subspace(subspace_group_tensors(model, group, layers), std::move(projection));
}

IntrinsicSearchResult intrinsic_dim_search(const std::function<double(int)>& run_subspace,
                                           const std::vector<int>& d_grid, double threshold,
                                           double reference_accuracy) {
  if (!run_subspace) throw std::invalid_argument("intrinsic_dim_search: missing runner");
  if (d_grid.empty()) throw std::invalid_argument("intrinsic_dim_search: empty grid");
  for (std::size_t i = 0; i + 1 < d_grid.size(); ++i)
    if (d_grid[i] >= d_grid[i + 1])
      throw std::invalid_argument("intrinsic_dim_search: grid must be strictly ascending");

  IntrinsicSearchResult result;
  result.reference = reference_accuracy;
  result.threshold = threshold;
  const double bar = threshold * reference_accuracy;
  for (int d : d_grid) {
    IntrinsicSearchRow row;
    row.d = d;
    row.accuracy = run_subspace(d);
    row.qualified = row.accuracy >= bar;
    result.rows.push_back(row);
    if (row.qualified) {
      result.reached = true;
      result.d_t = d;
      break;
    }
  }
  return result;
}

}  // namespace attnforge
