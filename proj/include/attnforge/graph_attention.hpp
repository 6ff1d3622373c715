#pragma once

#include <string>
#include <utility>
#include <vector>

#include "attnforge/tensor.hpp"

namespace attnforge {

enum class Modality { vision, text };

const char* modality_name(Modality m);
Modality modality_from_name(const std::string& name);  // throws std::invalid_argument

// Undirected graph over tokens. Loaded from a line-oriented text file:
//   N <node count>
//   M <modality per node, space separated>
//   <i> <j>        (one edge per line)
struct TokenGraph {
  int nodes = 0;
  std::vector<Modality> modality;
  std::vector<std::pair<int, int>> edges;

  void validate() const;  // throws std::invalid_argument
};

TokenGraph parse_token_graph(const std::string& text);  // throws std::runtime_error
TokenGraph load_token_graph(const std::string& path);

// N x N additive mask: 0 where i == j or {i, j} is an edge, -inf elsewhere
Tensor adjacency_to_mask(const TokenGraph& graph);

// block-diagonal placement of two per-modality masks; the cross-modal blocks
// are always all-zero (cross-modal attention stays open)
Tensor assemble_multimodal_mask(const Tensor& vision_mask, const Tensor& text_mask);

struct QuasiAttentionParams {
  // fixed {0, -inf} mask; never receives gradient
  Tensor g;
  // trainable additive bias, same shape as the score matrix
  Tensor g_hat;
  // tradeoff weight on g_hat
  double lambda = 1.0;
};

// softmax(q k^T / sqrt(q.cols) + lambda * g_hat, masked by g) v.
// Differentiable in q, k, v and g_hat; a row fully excluded by g throws
// DegenerateRowError. Undefined g means no mask, undefined g_hat means no
// bias term.
Tensor quasi_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       const QuasiAttentionParams& params);

}  // namespace attnforge
