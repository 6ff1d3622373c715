#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "attnforge/tensor.hpp"

namespace attnforge {

// ===== domain types =====

// Cross-attention map: rows are image tokens, cols are text tokens. When a map
// doubles as a spatial grid (box masking), entry (r, c) sits at pixel
// x = c, y = r. head/layer/frame are optional bookkeeping, -1 means unset.
struct AttentionMap {
  Tensor a;
  int head = -1;
  int layer = -1;
  int frame = -1;

  void validate() const;  // rank-2, nonempty, finite entries
};

std::string attention_map_to_json(const AttentionMap& map);
AttentionMap attention_map_from_json(const std::string& text);

// axis-aligned box centered at (x, y) with half-widths dx, dy in pixel units
struct BoxRegion {
  double x = 0.0;
  double y = 0.0;
  double dx = 1.0;
  double dy = 1.0;
  int frame = -1;

  void validate() const;  // finite center, dx > 0, dy > 0
  bool contains(double px, double py) const;
};

struct KeyPoint {
  double x = 0.0;
  double y = 0.0;
  double t = 0.0;
};

// ordered key points plus the box tolerances and velocity spacing scale used
// when the trajectory is expanded into per-frame boxes
struct Trajectory {
  std::vector<KeyPoint> points;
  double dx = 1.0;
  double dy = 1.0;
  double velocity_scale = 0.0;  // 0 keeps plain interpolation

  void validate() const;  // nonempty, strictly increasing t, dx/dy > 0
};

std::string trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const std::string& text);

// guidance strength and noise schedule for latent updates; sigma_sq(t) is
// (1 - alpha_t) / alpha_t, so alpha near 1 (little noise) damps the step
struct GuidanceConfig {
  double strength = 1.0;           // eta
  double smoothness_weight = 0.0;  // scale on the temporal term
  std::vector<double> alphas;      // one per step, each in (0, 1]
  int steps = 1;

  void validate() const;  // strength > 0, weight >= 0, 1 <= steps <= alphas
  double sigma_sq(int t) const;
};

// ===== scoring =====

// (1/n) sum over rows of the row logsumexp at sharpness lambda; differentiable
Tensor lse_score(const AttentionMap& map, double lambda = 1.0);

// max(0, f_neg - f_pos + margin)
double triplet_loss(double f_pos, double f_neg, double margin = 0.2);

struct PromptedWeights {
  Tensor k, v;
};

// w' = w + p for the key and value projections; pass frozen bases and
// trainable prompts, the addition routes gradients to the prompts alone
PromptedWeights additive_prompt(const Tensor& w_k, const Tensor& w_v,
                                const Tensor& p_k, const Tensor& p_v);

// Attr_h = A_h (elementwise *) d(score)/dA_h. The gradient factor is computed
// on detached probes and enters as a constant, so gradients through the result
// reach A_h only.
std::vector<AttentionMap> head_attribution(
    const std::vector<AttentionMap>& heads,
    const std::function<Tensor(const std::vector<AttentionMap>&)>& score);

// ===== trajectory boxes =====

// Interpolates the key points onto `frames` evenly spaced timestamps covering
// the key-point time span, then rescales each consecutive center gap by
// (1 + velocity_scale * v_i) where v_i is the local speed of the plain
// interpolation. velocity_scale = 0 reproduces the interpolation exactly; a
// single key point repeats its box at every frame.
std::vector<BoxRegion> allocate_boxes(const Trajectory& traj, int frames);

// (1 - mass inside box / total mass)^2 for a nonnegative map; differentiable
Tensor box_energy(const AttentionMap& map, const BoxRegion& box);

// mean over consecutive pairs of squared Frobenius distance; differentiable
Tensor temporal_smoothness(const std::vector<AttentionMap>& maps);

// one latent update z' = z - sigma_sq(t) * strength * d(energy)/dz
Tensor guidance_step(const Tensor& z,
                     const std::function<Tensor(const Tensor&)>& energy,
                     const GuidanceConfig& cfg, int t);

// ===== beam-pruned class search =====

struct BeamResult {
  int predicted = -1;
  long long scorer_calls = 0;
  int timesteps_run = 0;
  bool stopped_early = false;
};

// Class search over a noisy scorer where lower is better. Every class is
// sampled n_samples times at the first timestep; afterwards only the best
// ceil(classes / beam_factor) classes by running mean stay in the beam. Stops
// once the same class leads for `patience` consecutive timesteps, or after
// max_timesteps. Ties rank the lower class index first.
BeamResult beam_prune_schedule(const std::function<double(int cls, int t)>& scorer,
                               int classes, int beam_factor, int n_samples,
                               int patience, int max_timesteps);

}  // namespace attnforge
