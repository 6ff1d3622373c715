#include "attnforge/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace attnforge {

// ===== domain types =====

void AttentionMap::validate() const {
  if (!a.defined() || a.shape().size() != 2)
    throw std::invalid_argument("AttentionMap: matrix must be rank-2");
  for (double v : a.values())
    if (!std::isfinite(v)) throw std::invalid_argument("AttentionMap: entries must be finite");
}

std::string attention_map_to_json(const AttentionMap& map) {
  map.validate();
  nlohmann::json j;
  j["rows"] = map.a.rows();
  j["cols"] = map.a.cols();
  j["values"] = map.a.values();
  if (map.head >= 0) j["head"] = map.head;
  if (map.layer >= 0) j["layer"] = map.layer;
  if (map.frame >= 0) j["frame"] = map.frame;
  return j.dump();
}

AttentionMap attention_map_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("attention_map_from_json: malformed json");
  try {
    const int rows = j.at("rows").get<int>();
    const int cols = j.at("cols").get<int>();
    auto values = j.at("values").get<std::vector<double>>();
    if (rows < 1 || cols < 1 ||
        values.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
      throw std::runtime_error("attention_map_from_json: shape does not match value count");
    AttentionMap map;
    map.a = Tensor::from({rows, cols}, std::move(values));
    map.head = j.value("head", -1);
    map.layer = j.value("layer", -1);
    map.frame = j.value("frame", -1);
    map.validate();
    return map;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("attention_map_from_json: ") + e.what());
  }
}

void BoxRegion::validate() const {
  if (!std::isfinite(x) || !std::isfinite(y))
    throw std::invalid_argument("BoxRegion: center must be finite");
  if (!(dx > 0.0) || !(dy > 0.0))
    throw std::invalid_argument("BoxRegion: half-widths must be positive");
}

bool BoxRegion::contains(double px, double py) const {
  return std::fabs(px - x) <= dx && std::fabs(py - y) <= dy;
}

void Trajectory::validate() const {
  if (points.empty()) throw std::invalid_argument("Trajectory: needs at least one key point");
  for (const KeyPoint& p : points)
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.t))
      throw std::invalid_argument("Trajectory: key points must be finite");
  for (std::size_t i = 1; i < points.size(); ++i)
    if (!(points[i].t > points[i - 1].t))
      throw std::invalid_argument("Trajectory: timestamps must be strictly increasing");
  if (!(dx > 0.0) || !(dy > 0.0))
    throw std::invalid_argument("Trajectory: tolerances must be positive");
  if (!(velocity_scale >= 0.0) || !std::isfinite(velocity_scale))
    throw std::invalid_argument("Trajectory: velocity scale must be >= 0");
}

std::string trajectory_to_json(const Trajectory& traj) {
  traj.validate();
  nlohmann::json j;
  j["points"] = nlohmann::json::array();
  for (const KeyPoint& p : traj.points) j["points"].push_back({p.x, p.y, p.t});
  j["tolerance"] = {traj.dx, traj.dy};
  j["velocity_scale"] = traj.velocity_scale;
  return j.dump();
}

Trajectory trajectory_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("trajectory_from_json: malformed json");
  try {
    Trajectory traj;
    for (const auto& p : j.at("points")) {
      if (!p.is_array() || p.size() != 3)
        throw std::runtime_error("trajectory_from_json: key points must be [x, y, t]");
      traj.points.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
    }
    const auto& tol = j.at("tolerance");
    if (!tol.is_array() || tol.size() != 2)
      throw std::runtime_error("trajectory_from_json: tolerance must be [dx, dy]");
    traj.dx = tol[0].get<double>();
    traj.dy = tol[1].get<double>();
    traj.velocity_scale = j.value("velocity_scale", 0.0);
    traj.validate();
    return traj;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("trajectory_from_json: ") + e.what());
  }
}

void GuidanceConfig::validate() const {
  if (!(strength > 0.0) || !std::isfinite(strength))
    throw std::invalid_argument("GuidanceConfig: strength must be positive");
  if (!(smoothness_weight >= 0.0) || !std::isfinite(smoothness_weight))
    throw std::invalid_argument("GuidanceConfig: smoothness weight must be >= 0");
  if (alphas.empty()) throw std::invalid_argument("GuidanceConfig: alpha schedule is empty");
  for (double a : alphas)
    if (!(a > 0.0) || a > 1.0)
      throw std::invalid_argument("GuidanceConfig: alphas must lie in (0, 1]");
  if (steps < 1 || steps > static_cast<int>(alphas.size()))
    throw std::invalid_argument("GuidanceConfig: steps must fit the alpha schedule");
}

double GuidanceConfig::sigma_sq(int t) const {
  if (t < 0 || t >= static_cast<int>(alphas.size()))
    throw std::invalid_argument("GuidanceConfig: t outside the alpha schedule");
  return (1.0 - alphas[t]) / alphas[t];
}

// ===== scoring =====

Tensor lse_score(const AttentionMap& map, double lambda) {
  map.validate();
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("lse_score: lambda must be positive");
  Tensor acc;
  for (int i = 0; i < map.a.rows(); ++i) {
    Tensor term = logsumexp_row(row(map.a, i), lambda);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return scale(acc, 1.0 / static_cast<double>(map.a.rows()));
}

double triplet_loss(double f_pos, double f_neg, double margin) {
  return std::max(0.0, f_neg - f_pos + margin);
}

PromptedWeights additive_prompt(const Tensor& w_k, const Tensor& w_v,
                                const Tensor& p_k, const Tensor& p_v) {
  if (!w_k.defined() || !w_v.defined() || !p_k.defined() || !p_v.defined())
    throw std::invalid_argument("additive_prompt: undefined tensor");
  if (!w_k.same_shape(p_k) || !w_v.same_shape(p_v))
    throw std::invalid_argument("additive_prompt: prompt shape must match its base");
  return {add(w_k, p_k), add(w_v, p_v)};
}

std::vector<AttentionMap> head_attribution(
    const std::vector<AttentionMap>& heads,
    const std::function<Tensor(const std::vector<AttentionMap>&)>& score) {
  if (!score) throw std::invalid_argument("head_attribution: score is empty");
  if (heads.empty()) return {};

  // gradient pass on detached probes under a private tape, so the factors
  // come out as constants and any caller tape never sees the score graph
  std::vector<AttentionMap> probes(heads);
  Tape tape;
  {
    TapeScope scope(tape);
    for (AttentionMap& p : probes) {
      p.validate();
      p.a = p.a.clone();
      p.a.set_requires_grad(true);
    }
    Tensor s = score(probes);
    if (!s.defined() || s.numel() != 1)
      throw std::invalid_argument("head_attribution: score must evaluate to a scalar");
    tape.backward(s);
  }

  std::vector<AttentionMap> out(heads);
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const std::vector<double>* g = probes[h].a.grad_if();
    Tensor factor = g ? Tensor::from(heads[h].a.shape(), *g)
                      : Tensor::zeros(heads[h].a.shape());
    out[h].a = mul(heads[h].a, factor);
  }
  return out;
}

// ===== trajectory boxes =====

std::vector<BoxRegion> allocate_boxes(const Trajectory& traj, int frames) {
  traj.validate();
  if (frames < 1) throw std::invalid_argument("allocate_boxes: frames must be >= 1");

  std::vector<BoxRegion> out;
  out.reserve(frames);
  if (traj.points.size() == 1) {
    for (int i = 0; i < frames; ++i)
      out.push_back({traj.points[0].x, traj.points[0].y, traj.dx, traj.dy, i});
    return out;
  }

  // frames spread evenly over the key-point time span, endpoints included
  const double t0 = traj.points.front().t;
  const double t1 = traj.points.back().t;
  auto frame_time = [&](int i) {
    if (frames == 1) return t0;
    return t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(frames - 1);
  };
  auto interp = [&](double t) {
    std::size_t seg = 0;
    while (seg + 2 < traj.points.size() && t > traj.points[seg + 1].t) ++seg;
    const KeyPoint& a = traj.points[seg];
    const KeyPoint& b = traj.points[seg + 1];
    const double u = (t - a.t) / (b.t - a.t);
    return std::pair<double, double>{a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)};
  };

  std::vector<std::pair<double, double>> base(frames);
  for (int i = 0; i < frames; ++i) base[i] = interp(frame_time(i));

  // each consecutive gap of the plain interpolation is rescaled by
  // (1 + velocity_scale * local speed), so faster segments spread wider
  double cx = base[0].first;
  double cy = base[0].second;
  out.push_back({cx, cy, traj.dx, traj.dy, 0});
  for (int i = 1; i < frames; ++i) {
    const double gx = base[i].first - base[i - 1].first;
    const double gy = base[i].second - base[i - 1].second;
    const double dt = frame_time(i) - frame_time(i - 1);
    const double speed = std::sqrt(gx * gx + gy * gy) / dt;
    const double factor = 1.0 + traj.velocity_scale * speed;
    cx += factor * gx;
    cy += factor * gy;
    out.push_back({cx, cy, traj.dx, traj.dy, i});
  }
  return out;
}

Tensor box_energy(const AttentionMap& map, const BoxRegion& box) {
  map.validate();
  box.validate();
  double total = 0.0;
  for (double v : map.a.values()) {
    if (v < 0.0) throw std::invalid_argument("box_energy: attention mass must be nonnegative");
    total += v;
  }
  if (total <= 0.0) throw std::invalid_argument("box_energy: attention mass is all zero");

  Tensor mask = Tensor::zeros(map.a.shape());
  for (int r = 0; r < map.a.rows(); ++r)
    for (int c = 0; c < map.a.cols(); ++c)
      if (box.contains(static_cast<double>(c), static_cast<double>(r))) mask.at(r, c) = 1.0;

  Tensor ratio = div(sum(mul(map.a, mask)), sum(map.a));
  Tensor miss = add_scalar(neg(ratio), 1.0);
  return mul(miss, miss);
}

Tensor temporal_smoothness(const std::vector<AttentionMap>& maps) {
  if (maps.size() < 2) throw std::invalid_argument("temporal_smoothness: need at least two maps");
  for (const AttentionMap& m : maps) m.validate();
  for (std::size_t i = 1; i < maps.size(); ++i)
    if (!maps[i].a.same_shape(maps[0].a))
      throw std::invalid_argument("temporal_smoothness: maps must share one shape");

  Tensor acc;
  for (std::size_t i = 1; i < maps.size(); ++i) {
    Tensor d = sub(maps[i].a, maps[i - 1].a);
    Tensor sq = sum(mul(d, d));
    acc = acc.defined() ? add(acc, sq) : sq;
  }
  return scale(acc, 1.0 / static_cast<double>(maps.size() - 1));
}

Tensor guidance_step(const Tensor& z,
                     const std::function<Tensor(const Tensor&)>& energy,
                     const GuidanceConfig& cfg, int t) {
  cfg.validate();
  if (!z.defined()) throw std::invalid_argument("guidance_step: z is undefined");
  if (!energy) throw std::invalid_argument("guidance_step: energy is empty");
  const double step = cfg.sigma_sq(t) * cfg.strength;

  Tensor probe = z.clone();
  probe.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor e = energy(probe);
    if (!e.defined() || e.numel() != 1)
      throw std::invalid_argument("guidance_step: energy must evaluate to a scalar");
    tape.backward(e);
  }

  std::vector<double> next = z.values();
  if (const std::vector<double>* g = probe.grad_if()) {
    for (std::size_t i = 0; i < next.size(); ++i) {
      if (!std::isfinite((*g)[i])) throw std::runtime_error("guidance_step: non-finite gradient");
      next[i] -= step * (*g)[i];
    }
  }
  return Tensor::from(z.shape(), std::move(next));
}

// ===== beam-pruned class search =====

BeamResult beam_prune_schedule(const std::function<double(int cls, int t)>& scorer,
                               int classes, int beam_factor, int n_samples,
                               int patience, int max_timesteps) {
  if (!scorer) throw std::invalid_argument("beam_prune_schedule: scorer is empty");
  if (classes < 1) throw std::invalid_argument("beam_prune_schedule: classes must be >= 1");
  if (beam_factor < 1) throw std::invalid_argument("beam_prune_schedule: beam_factor must be >= 1");
  if (n_samples < 1) throw std::invalid_argument("beam_prune_schedule: n_samples must be >= 1");
  if (patience < 1) throw std::invalid_argument("beam_prune_schedule: patience must be >= 1");
  if (max_timesteps < 1) throw std::invalid_argument("beam_prune_schedule: max_timesteps must be >= 1");

  const int target = (classes + beam_factor - 1) / beam_factor;
  std::vector<int> beam(classes);
  std::iota(beam.begin(), beam.end(), 0);
  std::vector<double> sums(classes, 0.0);
  std::vector<long long> counts(classes, 0);
  auto mean_of = [&](int c) { return sums[c] / static_cast<double>(counts[c]); };

  BeamResult res;
  int leader = -1;
  int streak = 0;
  for (int t = 0; t < max_timesteps; ++t) {
    for (int c : beam) {
      for (int s = 0; s < n_samples; ++s) {
        sums[c] += scorer(c, t);
        ++counts[c];
        ++res.scorer_calls;
      }
    }
    res.timesteps_run = t + 1;
    std::sort(beam.begin(), beam.end(), [&](int a, int b) {
      const double ma = mean_of(a);
      const double mb = mean_of(b);
      if (ma != mb) return ma < mb;
      return a < b;
    });
    if (static_cast<int>(beam.size()) > target) beam.resize(target);
    streak = (beam.front() == leader) ? streak + 1 : 1;
    leader = beam.front();
    if (streak >= patience) {
      res.stopped_early = t + 1 < max_timesteps;
      break;
    }
  }
  res.predicted = leader;
  return res;
}

}  // namespace attnforge
