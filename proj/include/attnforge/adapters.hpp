#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "attnforge/transformer.hpp"

namespace attnforge {

// thrown when a tabulated closed-form parameter count requires a division
// that is not integral for the given configuration
struct FormulaInapplicableError : std::runtime_error {
  explicit FormulaInapplicableError(const std::string& what) : std::runtime_error(what) {}
};

enum class Method {
  full_ft,
  linear_probe,
  bitfit,
  adapter,
  adapter_drop,
  lora,
  lora_fix,
  compacter,
  kadaptation,
  rpb,
};

const char* method_name(Method method);
Method method_from_name(const std::string& name);  // throws std::invalid_argument

struct AdapterSpec {
  Method method = Method::full_ft;
  // attention matrices that receive a weight delta (lora / lora_fix /
  // kadaptation)
  std::vector<AttnRole> targets = {AttnRole::q, AttnRole::v};
  int bottleneck = 64;  // adapter / adapter_drop / compacter
  int rank = 4;         // lora / lora_fix / kadaptation
  int kron_n = 4;       // compacter / kadaptation
  bool with_bias = false;           // kadaptation: trainable bias delta on targets
  bool split_slow_by_role = false;  // kadaptation: separate slow set per target

  void validate(const ModelConfig& config) const;  // throws std::invalid_argument
};

// slow/fast factor state for the Kronecker-sum weight delta
struct KAdaptState {
  // slow[set][i]: kron_n x kron_n. Exactly one shared set, or one set per
  // target role when split_slow_by_role.
  std::vector<std::vector<Tensor>> slow;
  // fast_u[layer][t][i]: (d/n) x r and fast_v[layer][t][i]: r x (d/n), where
  // t indexes the AdapterSpec target list
  std::vector<std::vector<std::vector<Tensor>>> fast_u;
  std::vector<std::vector<std::vector<Tensor>>> fast_v;
  // bias_delta[layer][t]: length-d vector, populated when with_bias
  std::vector<std::vector<Tensor>> bias_delta;
};

// delta = sum_i slow_i kron (u_i v_i); differentiable through every factor
Tensor kadapt_delta(const KAdaptState& state, int layer, int target_index);

struct LoraPair {
  Tensor a, b;  // delta = a (d x r) times b (r x d)
};

struct BottleneckPair {
  Tensor down, up;  // h -> h + gelu(h down) up
};

struct KronProjFactors {
  std::vector<Tensor> u, v;  // weight = sum_i slow_i kron (u_i v_i)
};

struct AdaptedModel {
  AdapterSpec spec;
  VitModel model;  // private clone; frozen per method, head always trainable

  // method-specific parameter tensors; trainable ones are also listed in extra
  std::vector<std::vector<LoraPair>> lora;              // [layer][target]
  std::vector<std::array<BottleneckPair, 2>> adapters;  // [layer][0 attn, 1 mlp]
  std::vector<Tensor> compacter_slow;
  // [layer][attn down, attn up, mlp down, mlp up]
  std::vector<std::array<KronProjFactors, 4>> compacter;
  KAdaptState kadapt;
  std::vector<Tensor> rpb;  // [layer]: tokens x tokens score bias

  // trainable method tensors with stable names, in creation order
  std::vector<std::pair<std::string, Tensor>> extra;

  // closures hold tensor handles by value, so the hooks stay valid on their
  // own; rebuild after structural changes
  ForwardHooks hooks() const;
  Tensor forward(const Tensor& image, ForwardTrace* trace = nullptr) const;
};

// clones the model, freezes it per method, creates the method's trainable
// tensors (seed pins their initial values)
AdaptedModel instantiate(const AdapterSpec& spec, const VitModel& model, std::uint64_t seed = 1);

// every trainable tensor with a stable name: unfrozen base tensors, then extras
std::vector<std::pair<std::string, Tensor>> trainable_tensors(const AdaptedModel& adapted);

// the same list as name/shape pairs derived from the config alone, so counts
// for large configurations need no model allocation; order and names match
// trainable_tensors exactly
std::vector<std::pair<std::string, std::vector<int>>> plan_trainable_tensors(
    const AdapterSpec& spec, const ModelConfig& config);

// materializes W <- W + delta into a plain transformer whose forward matches
// the adapted forward; bottleneck-insertion methods throw (their modules sit
// between sublayers and cannot fold into the weights)
VitModel merge(const AdaptedModel& adapted);

struct ParamReport {
  long long exact_count = 0;
  std::optional<long long> closed_form_count;  // empty when missing or inapplicable
  std::string closed_form_note;                // reason when closed_form_count is empty
  std::vector<std::pair<std::string, long long>> breakdown;
};

ParamReport exact_param_count(const AdaptedModel& adapted, bool include_head);

// evaluates the tabulated closed-form trainable-parameter count. Methods
// without a tabulated formula throw std::invalid_argument; formulas whose
// divisions come out non-integral throw FormulaInapplicableError.
long long closed_form_count(Method method, int layers, int k, int d, int d_model, int rank,
                            int kron_n);

}  // namespace attnforge
