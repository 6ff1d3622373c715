#include "attnforge/adapters.hpp"

#include <algorithm>

#include "attnforge/rng.hpp"

namespace attnforge {

namespace {

struct MethodNameRow {
  Method method;
  const char* name;
};

constexpr MethodNameRow kMethodNames[] = {
    {Method::full_ft, "full_ft"},       {Method::linear_probe, "linear_probe"},
    {Method::bitfit, "bitfit"},         {Method::adapter, "adapter"},
    {Method::adapter_drop, "adapter_drop"}, {Method::lora, "lora"},
    {Method::lora_fix, "lora_fix"},     {Method::compacter, "compacter"},
    {Method::kadaptation, "kadaptation"}, {Method::rpb, "rpb"},
};

bool uses_rank(Method m) {
  return m == Method::lora || m == Method::lora_fix || m == Method::kadaptation;
}

bool uses_bottleneck(Method m) {
  return m == Method::adapter || m == Method::adapter_drop || m == Method::compacter;
}

bool uses_kron(Method m) { return m == Method::compacter || m == Method::kadaptation; }

bool bottleneck_family(Method m) {
  return m == Method::adapter || m == Method::adapter_drop || m == Method::compacter;
}

Tensor trunc_normal(Rng& rng, std::vector<int> shape, bool requires_grad) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = rng.truncated_normal(0.02);
  return t;
}

std::string layer_prefix(int layer) { return "layer" + std::to_string(layer) + "."; }

}  // namespace

const char* method_name(Method method) {
  for (const MethodNameRow& row : kMethodNames)
    if (row.method == method) return row.name;
  throw std::invalid_argument("method_name: bad method tag");
}

Method method_from_name(const std::string& name) {
  for (const MethodNameRow& row : kMethodNames)
    if (name == row.name) return row.method;
  throw std::invalid_argument("unknown adaptation method: " + name);
}

void AdapterSpec::validate(const ModelConfig& config) const {
  config.validate();
  if (targets.empty()) throw std::invalid_argument("adapter spec: target list is empty");
  for (std::size_t i = 0; i < targets.size(); ++i)
    for (std::size_t j = i + 1; j < targets.size(); ++j)
      if (targets[i] == targets[j])
        throw std::invalid_argument("adapter spec: duplicate target matrix");
  if (uses_rank(method) && rank < 1) throw std::invalid_argument("adapter spec: rank must be >= 1");
  if (uses_bottleneck(method) && bottleneck < 1)
    throw std::invalid_argument("adapter spec: bottleneck width must be >= 1");
  if (uses_kron(method)) {
    if (kron_n < 1) throw std::invalid_argument("adapter spec: kron_n must be >= 1");
    if (config.d_model % kron_n != 0)
      throw std::invalid_argument("adapter spec: kron_n must divide d_model");
    if (method == Method::compacter && bottleneck % kron_n != 0)
      throw std::invalid_argument("adapter spec: kron_n must divide the bottleneck width");
  }
}

Tensor kadapt_delta(const KAdaptState& state, int layer, int target_index) {
  if (layer < 0 || layer >= static_cast<int>(state.fast_u.size()))
    throw std::invalid_argument("kadapt_delta: layer out of range");
  if (target_index < 0 || target_index >= static_cast<int>(state.fast_u[layer].size()))
    throw std::invalid_argument("kadapt_delta: target index out of range");
  if (state.slow.empty()) throw std::invalid_argument("kadapt_delta: no slow weights");
  const std::vector<Tensor>& slow =
      state.slow.size() == 1 ? state.slow[0] : state.slow.at(target_index);
  const std::vector<Tensor>& us = state.fast_u[layer][target_index];
  const std::vector<Tensor>& vs = state.fast_v[layer][target_index];
  if (slow.size() != us.size() || us.size() != vs.size())
    throw std::invalid_argument("kadapt_delta: factor counts disagree");
  Tensor delta = kron(slow[0], matmul(us[0], vs[0]));
  for (std::size_t i = 1; i < slow.size(); ++i)
    delta = add(delta, kron(slow[i], matmul(us[i], vs[i])));
  return delta;
}

AdaptedModel instantiate(const AdapterSpec& spec, const VitModel& model, std::uint64_t seed) {
  spec.validate(model.config);
  AdaptedModel out;
  out.spec = spec;
  out.model = clone_model(model);

  const ModelConfig& cfg = out.model.config;
  const int d = cfg.d_model;
  const int L = cfg.layers;
  Rng rng(seed);

  // base freezing: everything off, then the method's base set back on.
  // the classifier head trains under every method.
  set_all_requires_grad(out.model, false);
  out.model.head_w.set_requires_grad(true);
  out.model.head_b.set_requires_grad(true);
  if (spec.method == Method::full_ft) {
    set_all_requires_grad(out.model, true);
  } else if (spec.method == Method::bitfit) {
    out.model.patch_b.set_requires_grad(true);
    for (LayerWeights& lw : out.model.layers) {
      lw.attn.b_q.set_requires_grad(true);
      lw.attn.b_k.set_requires_grad(true);
      lw.attn.b_v.set_requires_grad(true);
      lw.attn.b_o.set_requires_grad(true);
      lw.ln1_bias.set_requires_grad(true);
      lw.ln2_bias.set_requires_grad(true);
      lw.mlp_b1.set_requires_grad(true);
      lw.mlp_b2.set_requires_grad(true);
    }
    out.model.final_ln_bias.set_requires_grad(true);
  }

  auto push = [&out](const std::string& name, const Tensor& t) {
    out.extra.emplace_back(name, t);
  };

  switch (spec.method) {
    case Method::full_ft:
    case Method::linear_probe:
    case Method::bitfit:
      break;

    case Method::lora:
    case Method::lora_fix: {
      const bool a_trainable = spec.method == Method::lora;
      out.lora.resize(L);
      for (int l = 0; l < L; ++l) {
        out.lora[l].resize(spec.targets.size());
        for (std::size_t t = 0; t < spec.targets.size(); ++t) {
          LoraPair& p = out.lora[l][t];
          p.a = trunc_normal(rng, {d, spec.rank}, a_trainable);
          p.b = Tensor::zeros({spec.rank, d}, true);
          std::string base = layer_prefix(l) + attn_role_name(spec.targets[t]);
          if (a_trainable) push(base + ".lora_a", p.a);
          push(base + ".lora_b", p.b);
        }
      }
      break;
    }

    case Method::adapter:
    case Method::adapter_drop: {
      out.adapters.resize(L);
      const int first = spec.method == Method::adapter_drop ? L - 1 : 0;
      for (int l = first; l < L; ++l) {
        for (int site = 0; site < 2; ++site) {
          BottleneckPair& p = out.adapters[l][site];
          p.down = trunc_normal(rng, {d, spec.bottleneck}, true);
          p.up = Tensor::zeros({spec.bottleneck, d}, true);  // identity at start
          std::string base = layer_prefix(l) + (site == 0 ? "attn_adapter" : "mlp_adapter");
          push(base + ".down", p.down);
          push(base + ".up", p.up);
        }
      }
      break;
    }

    case Method::compacter: {
      const int n = spec.kron_n;
      for (int i = 0; i < n; ++i) {
        Tensor a = trunc_normal(rng, {n, n}, true);
        out.compacter_slow.push_back(a);
        push("compacter.slow" + std::to_string(i), a);
      }
      out.compacter.resize(L);
      const char* site_names[4] = {"attn_adapter.down", "attn_adapter.up", "mlp_adapter.down",
                                   "mlp_adapter.up"};
      for (int l = 0; l < L; ++l) {
        for (int site = 0; site < 4; ++site) {
          const bool is_up = site % 2 == 1;
          const int rows = (is_up ? spec.bottleneck : d) / n;
          const int cols = (is_up ? d : spec.bottleneck) / n;
          KronProjFactors& f = out.compacter[l][site];
          for (int i = 0; i < n; ++i) {
            // zero left factors on the up projections keep the module an
            // identity at the start
            Tensor u = is_up ? Tensor::zeros({rows, 1}, true) : trunc_normal(rng, {rows, 1}, true);
            Tensor v = trunc_normal(rng, {1, cols}, true);
            f.u.push_back(u);
            f.v.push_back(v);
            std::string base = layer_prefix(l) + site_names[site];
            push(base + ".u" + std::to_string(i), u);
            push(base + ".v" + std::to_string(i), v);
          }
        }
      }
      break;
    }

    case Method::kadaptation: {
      const int n = spec.kron_n;
      const int block = d / n;
      const std::size_t sets = spec.split_slow_by_role ? spec.targets.size() : 1;
      out.kadapt.slow.resize(sets);
      for (std::size_t s = 0; s < sets; ++s) {
        std::string prefix =
            sets == 1 ? "kadapt." : std::string("kadapt.") + attn_role_name(spec.targets[s]) + ".";
        for (int i = 0; i < n; ++i) {
          Tensor a = trunc_normal(rng, {n, n}, true);
          out.kadapt.slow[s].push_back(a);
          push(prefix + "slow" + std::to_string(i), a);
        }
      }
      out.kadapt.fast_u.resize(L);
      out.kadapt.fast_v.resize(L);
      if (spec.with_bias) out.kadapt.bias_delta.resize(L);
      for (int l = 0; l < L; ++l) {
        out.kadapt.fast_u[l].resize(spec.targets.size());
        out.kadapt.fast_v[l].resize(spec.targets.size());
        if (spec.with_bias) out.kadapt.bias_delta[l].resize(spec.targets.size());
        for (std::size_t t = 0; t < spec.targets.size(); ++t) {
          std::string base = layer_prefix(l) + attn_role_name(spec.targets[t]);
          for (int i = 0; i < n; ++i) {
            // zero u keeps the delta zero at the start
            Tensor u = Tensor::zeros({block, spec.rank}, true);
            Tensor v = trunc_normal(rng, {spec.rank, block}, true);
            out.kadapt.fast_u[l][t].push_back(u);
            out.kadapt.fast_v[l][t].push_back(v);
            push(base + ".kadapt_u" + std::to_string(i), u);
            push(base + ".kadapt_v" + std::to_string(i), v);
          }
          if (spec.with_bias) {
            Tensor bd = Tensor::zeros({d}, true);
            out.kadapt.bias_delta[l][t] = bd;
            push(base + ".bias_delta", bd);
          }
        }
      }
      break;
    }

    case Method::rpb: {
      for (int l = 0; l < L; ++l) {
        Tensor b = Tensor::zeros({cfg.tokens(), cfg.tokens()}, true);
        out.rpb.push_back(b);
        push(layer_prefix(l) + "rpb_bias", b);
      }
      break;
    }
  }
  return out;
}

ForwardHooks AdaptedModel::hooks() const {
  ForwardHooks h;
  switch (spec.method) {
    case Method::lora:
    case Method::lora_fix: {
      h.attn_weight = [targets = spec.targets, pairs = lora](int layer, AttnRole role,
                                                             const Tensor& base) -> Tensor {
        for (std::size_t t = 0; t < targets.size(); ++t)
          if (targets[t] == role)
            return add(base, matmul(pairs[layer][t].a, pairs[layer][t].b));
        return {};
      };
      break;
    }

    case Method::kadaptation: {
      h.attn_weight = [targets = spec.targets, state = kadapt](int layer, AttnRole role,
                                                               const Tensor& base) -> Tensor {
        for (std::size_t t = 0; t < targets.size(); ++t)
          if (targets[t] == role)
            return add(base, kadapt_delta(state, layer, static_cast<int>(t)));
        return {};
      };
      if (spec.with_bias) {
        h.attn_bias = [targets = spec.targets, state = kadapt](int layer, AttnRole role,
                                                               const Tensor& base) -> Tensor {
          for (std::size_t t = 0; t < targets.size(); ++t)
            if (targets[t] == role) return add(base, state.bias_delta[layer][t]);
          return {};
        };
      }
      break;
    }

    case Method::adapter:
    case Method::adapter_drop: {
      h.after_attention = [ads = adapters](int layer, const Tensor& x) -> Tensor {
        const BottleneckPair& p = ads[layer][0];
        if (!p.down.defined()) return {};
        return add(x, matmul(gelu(matmul(x, p.down)), p.up));
      };
      h.after_mlp = [ads = adapters](int layer, const Tensor& x) -> Tensor {
        const BottleneckPair& p = ads[layer][1];
        if (!p.down.defined()) return {};
        return add(x, matmul(gelu(matmul(x, p.down)), p.up));
      };
      break;
    }

    case Method::compacter: {
      auto proj_weight = [](const std::vector<Tensor>& slow, const KronProjFactors& f) {
        Tensor w = kron(slow[0], matmul(f.u[0], f.v[0]));
        for (std::size_t i = 1; i < slow.size(); ++i)
          w = add(w, kron(slow[i], matmul(f.u[i], f.v[i])));
        return w;
      };
      h.after_attention = [slow = compacter_slow, projs = compacter,
                           proj_weight](int layer, const Tensor& x) -> Tensor {
        Tensor down = proj_weight(slow, projs[layer][0]);
        Tensor up = proj_weight(slow, projs[layer][1]);
        return add(x, matmul(gelu(matmul(x, down)), up));
      };
      h.after_mlp = [slow = compacter_slow, projs = compacter,
                     proj_weight](int layer, const Tensor& x) -> Tensor {
        Tensor down = proj_weight(slow, projs[layer][2]);
        Tensor up = proj_weight(slow, projs[layer][3]);
        return add(x, matmul(gelu(matmul(x, down)), up));
      };
      break;
    }

    case Method::rpb: {
      // vit_forward adds this on top of any persistent attn_bias buffer
      h.attention_additive_bias = [biases = rpb](int layer) { return biases[layer]; };
      break;
    }

    case Method::full_ft:
    case Method::linear_probe:
    case Method::bitfit:
      break;
  }
  return h;
}

Tensor AdaptedModel::forward(const Tensor& image, ForwardTrace* trace) const {
  ForwardHooks h = hooks();
  return vit_forward(model, image, &h, trace);
}

std::vector<std::pair<std::string, Tensor>> trainable_tensors(const AdaptedModel& adapted) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& [name, t] : named_tensors(adapted.model))
    if (t.requires_grad()) out.emplace_back(name, t);
  for (const auto& entry : adapted.extra) out.push_back(entry);
  return out;
}

std::vector<std::pair<std::string, std::vector<int>>> plan_trainable_tensors(
    const AdapterSpec& spec, const ModelConfig& config) {
  spec.validate(config);
  const int d = config.d_model;
  const int L = config.layers;
  std::vector<std::pair<std::string, std::vector<int>>> out;

  auto layer_bias_shapes = [&](int l) {
    std::string p = layer_prefix(l);
    out.emplace_back(p + "b_q", std::vector<int>{d});
    out.emplace_back(p + "b_k", std::vector<int>{d});
    out.emplace_back(p + "b_v", std::vector<int>{d});
    out.emplace_back(p + "b_o", std::vector<int>{d});
    out.emplace_back(p + "ln1_bias", std::vector<int>{d});
    out.emplace_back(p + "ln2_bias", std::vector<int>{d});
    out.emplace_back(p + "mlp_b1", std::vector<int>{config.mlp_hidden()});
    out.emplace_back(p + "mlp_b2", std::vector<int>{d});
  };
  auto head_shapes = [&] {
    out.emplace_back("head_w", std::vector<int>{d, config.classes});
    out.emplace_back("head_b", std::vector<int>{config.classes});
  };

  switch (spec.method) {
    case Method::full_ft: {
      out.emplace_back("patch_w", std::vector<int>{config.patch_dim(), d});
      out.emplace_back("patch_b", std::vector<int>{d});
      out.emplace_back("cls_token", std::vector<int>{1, d});
      out.emplace_back("pos_embed", std::vector<int>{config.tokens(), d});
      for (int l = 0; l < L; ++l) {
        std::string p = layer_prefix(l);
        out.emplace_back(p + "w_q", std::vector<int>{d, d});
        out.emplace_back(p + "b_q", std::vector<int>{d});
        out.emplace_back(p + "w_k", std::vector<int>{d, d});
        out.emplace_back(p + "b_k", std::vector<int>{d});
        out.emplace_back(p + "w_v", std::vector<int>{d, d});
        out.emplace_back(p + "b_v", std::vector<int>{d});
        out.emplace_back(p + "w_o", std::vector<int>{d, d});
        out.emplace_back(p + "b_o", std::vector<int>{d});
        out.emplace_back(p + "ln1_gain", std::vector<int>{d});
        out.emplace_back(p + "ln1_bias", std::vector<int>{d});
        out.emplace_back(p + "ln2_gain", std::vector<int>{d});
        out.emplace_back(p + "ln2_bias", std::vector<int>{d});
        out.emplace_back(p + "mlp_w1", std::vector<int>{d, config.mlp_hidden()});
        out.emplace_back(p + "mlp_b1", std::vector<int>{config.mlp_hidden()});
        out.emplace_back(p + "mlp_w2", std::vector<int>{config.mlp_hidden(), d});
        out.emplace_back(p + "mlp_b2", std::vector<int>{d});
      }
      out.emplace_back("final_ln_gain", std::vector<int>{d});
      out.emplace_back("final_ln_bias", std::vector<int>{d});
      head_shapes();
      return out;
    }

    case Method::bitfit: {
      out.emplace_back("patch_b", std::vector<int>{d});
      for (int l = 0; l < L; ++l) layer_bias_shapes(l);
      out.emplace_back("final_ln_bias", std::vector<int>{d});
      head_shapes();
      return out;
    }

    case Method::linear_probe: {
      head_shapes();
      return out;
    }

    default:
      break;
  }

  head_shapes();
  switch (spec.method) {
    case Method::lora:
    case Method::lora_fix: {
      const bool a_trainable = spec.method == Method::lora;
      for (int l = 0; l < L; ++l)
        for (AttnRole role : spec.targets) {
          std::string base = layer_prefix(l) + attn_role_name(role);
          if (a_trainable) out.emplace_back(base + ".lora_a", std::vector<int>{d, spec.rank});
          out.emplace_back(base + ".lora_b", std::vector<int>{spec.rank, d});
        }
      break;
    }

    case Method::adapter:
    case Method::adapter_drop: {
      const int first = spec.method == Method::adapter_drop ? L - 1 : 0;
      for (int l = first; l < L; ++l)
        for (int site = 0; site < 2; ++site) {
          std::string base = layer_prefix(l) + (site == 0 ? "attn_adapter" : "mlp_adapter");
          out.emplace_back(base + ".down", std::vector<int>{d, spec.bottleneck});
          out.emplace_back(base + ".up", std::vector<int>{spec.bottleneck, d});
        }
      break;
    }

    case Method::compacter: {
      const int n = spec.kron_n;
      for (int i = 0; i < n; ++i)
        out.emplace_back("compacter.slow" + std::to_string(i), std::vector<int>{n, n});
      const char* site_names[4] = {"attn_adapter.down", "attn_adapter.up", "mlp_adapter.down",
                                   "mlp_adapter.up"};
      for (int l = 0; l < L; ++l)
        for (int site = 0; site < 4; ++site) {
          const bool is_up = site % 2 == 1;
          const int rows = (is_up ? spec.bottleneck : d) / n;
          const int cols = (is_up ? d : spec.bottleneck) / n;
          for (int i = 0; i < n; ++i) {
            std::string base = layer_prefix(l) + site_names[site];
            out.emplace_back(base + ".u" + std::to_string(i), std::vector<int>{rows, 1});
            out.emplace_back(base + ".v" + std::to_string(i), std::vector<int>{1, cols});
          }
        }
      break;
    }

    case Method::kadaptation: {
      const int n = spec.kron_n;
      const int block = d / n;
      const std::size_t sets = spec.split_slow_by_role ? spec.targets.size() : 1;
      for (std::size_t s = 0; s < sets; ++s) {
        std::string prefix =
            sets == 1 ? "kadapt." : std::string("kadapt.") + attn_role_name(spec.targets[s]) + ".";
        for (int i = 0; i < n; ++i)
          out.emplace_back(prefix + "slow" + std::to_string(i), std::vector<int>{n, n});
      }
      for (int l = 0; l < L; ++l)
        for (AttnRole role : spec.targets) {
          std::string base = layer_prefix(l) + attn_role_name(role);
          for (int i = 0; i < n; ++i) {
            out.emplace_back(base + ".kadapt_u" + std::to_string(i),
                             std::vector<int>{block, spec.rank});
            out.emplace_back(base + ".kadapt_v" + std::to_string(i),
                             std::vector<int>{spec.rank, block});
          }
          if (spec.with_bias) out.emplace_back(base + ".bias_delta", std::vector<int>{d});
        }
      break;
    }

    case Method::rpb: {
      for (int l = 0; l < L; ++l)
        out.emplace_back(layer_prefix(l) + "rpb_bias",
                         std::vector<int>{config.tokens(), config.tokens()});
      break;
    }

    default:
      break;
  }
  return out;
}

VitModel merge(const AdaptedModel& adapted) {
  if (bottleneck_family(adapted.spec.method))
    throw std::invalid_argument(std::string("merge: ") + method_name(adapted.spec.method) +
                                " inserts bottleneck modules and cannot fold into the weights");
  VitModel merged = clone_model(adapted.model);
  const std::vector<AttnRole>& targets = adapted.spec.targets;

  auto target_weight = [](LayerWeights& lw, AttnRole role) -> Tensor& {
    switch (role) {
      case AttnRole::q: return lw.attn.w_q;
      case AttnRole::k: return lw.attn.w_k;
      case AttnRole::v: return lw.attn.w_v;
      case AttnRole::o: return lw.attn.w_o;
    }
    throw std::invalid_argument("merge: bad target role");
  };
  auto target_bias = [](LayerWeights& lw, AttnRole role) -> Tensor& {
    switch (role) {
      case AttnRole::q: return lw.attn.b_q;
      case AttnRole::k: return lw.attn.b_k;
      case AttnRole::v: return lw.attn.b_v;
      case AttnRole::o: return lw.attn.b_o;
    }
    throw std::invalid_argument("merge: bad target role");
  };
  auto add_into = [](Tensor& dst, const Tensor& delta) {
    if (!dst.same_shape(delta)) throw std::invalid_argument("merge: delta shape mismatch");
    for (std::size_t i = 0; i < dst.numel(); ++i) dst.values()[i] += delta.values()[i];
  };

  switch (adapted.spec.method) {
    case Method::lora:
    case Method::lora_fix:
      for (std::size_t l = 0; l < merged.layers.size(); ++l)
        for (std::size_t t = 0; t < targets.size(); ++t) {
          const LoraPair& p = adapted.lora[l][t];
          add_into(target_weight(merged.layers[l], targets[t]), matmul(p.a, p.b));
        }
      break;

    case Method::kadaptation:
      for (std::size_t l = 0; l < merged.layers.size(); ++l)
        for (std::size_t t = 0; t < targets.size(); ++t) {
          add_into(target_weight(merged.layers[l], targets[t]),
                   kadapt_delta(adapted.kadapt, static_cast<int>(l), static_cast<int>(t)));
          if (adapted.spec.with_bias)
            add_into(target_bias(merged.layers[l], targets[t]), adapted.kadapt.bias_delta[l][t]);
        }
      break;

    case Method::rpb:
      for (std::size_t l = 0; l < merged.layers.size(); ++l) {
        if (merged.layers[l].attn_bias.defined())
          add_into(merged.layers[l].attn_bias, adapted.rpb[l]);
        else
          merged.layers[l].attn_bias = adapted.rpb[l].clone();
      }
      break;

    case Method::full_ft:
    case Method::linear_probe:
    case Method::bitfit:
      // trained values already live in the base tensors
      break;

    default:
      throw std::invalid_argument("merge: unhandled method");
  }
  return merged;
}

ParamReport exact_param_count(const AdaptedModel& adapted, bool include_head) {
  ParamReport report;
  for (auto& [name, t] : trainable_tensors(adapted)) {
    if (!include_head && (name == "head_w" || name == "head_b")) continue;
    long long n = static_cast<long long>(t.numel());
    report.exact_count += n;
    report.breakdown.emplace_back(name, n);
  }
  const ModelConfig& cfg = adapted.model.config;
  try {
    report.closed_form_count =
        closed_form_count(adapted.spec.method, cfg.layers, cfg.d_model, adapted.spec.bottleneck,
                          cfg.d_model, adapted.spec.rank, adapted.spec.kron_n);
  } catch (const std::exception& e) {
    report.closed_form_note = e.what();
  }
  return report;
}

long long closed_form_count(Method method, int layers, int k, int d, int d_model, int rank,
                            int kron_n) {
  const long long L = layers;
  switch (method) {
    case Method::adapter:
      return 4 * L * static_cast<long long>(k) * d;
    case Method::lora:
      return 2 * L * static_cast<long long>(rank) * d_model;
    case Method::compacter: {
      if (kron_n < 1) throw std::invalid_argument("closed_form_count: kron_n must be >= 1");
      if (k % kron_n != 0 || d % kron_n != 0)
        throw FormulaInapplicableError(
            "closed_form_count: compacter formula needs kron_n to divide both projection "
            "dimensions");
      long long nn = kron_n;
      return 4 * L * (k / kron_n + d / kron_n) + nn * nn * nn;
    }
    case Method::kadaptation: {
      if (kron_n < 1) throw std::invalid_argument("closed_form_count: kron_n must be >= 1");
      if ((d_model + rank) % kron_n != 0)
        throw FormulaInapplicableError(
            "closed_form_count: kadaptation formula divides d_model + rank by kron_n, which is "
            "not integral here");
      long long nn = kron_n;
      return 2 * L * ((d_model + rank) / kron_n) + nn * nn * nn;
    }
    default:
      throw std::invalid_argument(std::string("closed_form_count: no tabulated formula for ") +
                                  method_name(method));
  }
}

}  // namespace attnforge
