#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "attnforge/tensor.hpp"

namespace attnforge {

struct ModelConfig {
  int layers = 2;
  int d_model = 32;
  int heads = 4;
  double mlp_ratio = 4.0;
  int patch_size = 4;
  int image_side = 16;
  int classes = 2;
  std::uint64_t seed = 1;

  int patch_dim() const { return patch_size * patch_size; }
  int patches_per_side() const { return image_side / patch_size; }
  int tokens() const { return patches_per_side() * patches_per_side() + 1; }  // +1 cls
  int head_dim() const { return d_model / heads; }
  int mlp_hidden() const;

  void validate() const;  // throws std::invalid_argument on bad combinations
  bool operator==(const ModelConfig&) const = default;
};

struct AttentionWeights {
  Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
};

struct LayerWeights {
  AttentionWeights attn;
  Tensor ln1_gain, ln1_bias;
  Tensor ln2_gain, ln2_bias;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  // persistent additive attention bias (tokens x tokens, shared across heads);
  // undefined on a freshly built model, populated e.g. by merging a trained
  // positional-bias method into the plain weights
  Tensor attn_bias;
};

struct VitModel {
  ModelConfig config;
  Tensor patch_w, patch_b;  // patch_dim x d_model, d_model
  Tensor cls_token;         // 1 x d_model
  Tensor pos_embed;         // tokens x d_model
  std::vector<LayerWeights> layers;
  Tensor final_ln_gain, final_ln_bias;
  Tensor head_w, head_b;  // d_model x classes, classes
};

// truncated-normal(std 0.02) weight matrices and embeddings, zero biases,
// unit layer-norm gains; draw order fixed so a seed pins every value
VitModel build_vit(const ModelConfig& config);

// every tensor with a stable name, in a fixed order (checkpointing, counting,
// freezing). attn_bias buffers appear only when defined.
std::vector<std::pair<std::string, Tensor>> named_tensors(const VitModel& model);

void set_all_requires_grad(VitModel& model, bool requires_grad);

// deep copy: fresh tensors, same values, requires_grad cleared
VitModel clone_model(const VitModel& model);

struct ForwardTrace {
  // attention[layer][head]: tokens x tokens row-stochastic attention map.
  // Handles point into the forward graph; read them as values.
  std::vector<std::vector<Tensor>> attention;
  Tensor logits;
};

enum class AttnRole { q = 0, k = 1, v = 2, o = 3 };

const char* attn_role_name(AttnRole role);

// Hooks let adaptation methods splice themselves into the forward pass
// without the base model knowing about any particular method. Every hook may
// be empty; a hook returning an undefined Tensor means "keep the base".
struct ForwardHooks {
  std::function<Tensor(int layer, AttnRole role, const Tensor& base)> attn_weight;
  std::function<Tensor(int layer, AttnRole role, const Tensor& base)> attn_bias;
  // additive per-layer score bias (tokens x tokens), applied to every head
  std::function<Tensor(int layer)> attention_additive_bias;
  // wrap sublayer outputs (bottleneck adapters); input is the sublayer
  // output before the residual add
  std::function<Tensor(int layer, const Tensor& x)> after_attention;
  std::function<Tensor(int layer, const Tensor& x)> after_mlp;
  std::function<Tensor(const Tensor& base)> head_weight;
  std::function<Tensor(const Tensor& base)> head_bias;
};

// scaled dot-product attention over x (rows = tokens). additive_bias, when
// defined, is added to each head's score matrix before the row softmax.
// head_maps, when given, receives one tokens x tokens map per head.
Tensor multi_head_attention(const Tensor& x, const AttentionWeights& w, int heads,
                            const Tensor& additive_bias = {},
                            std::vector<Tensor>* head_maps = nullptr);

// image (image_side x image_side) -> rank-1 logits
Tensor vit_forward(const VitModel& model, const Tensor& image,
                   const ForwardHooks* hooks = nullptr, ForwardTrace* trace = nullptr);

// row-major non-overlapping patches: (patches, patch_dim); differentiable
Tensor extract_patches(const Tensor& image, int patch_size);

// ===== checkpointing =====
//
// A checkpoint is a directory holding manifest.txt (field = value lines: the
// model config plus one "tensor.<name> = <dims>" line per tensor) and
// weights.bin (one little-endian f64 blob per tensor, concatenated in
// manifest order).

void save_checkpoint(const VitModel& model, const std::string& dir);
VitModel load_checkpoint(const std::string& dir);

}  // namespace attnforge
