#include "attnforge/graph_attention.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace attnforge {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_mask(const Tensor& m, const char* what) {
  if (!m.defined() || m.shape().size() != 2 || m.rows() != m.cols())
    throw std::invalid_argument(std::string(what) + ": square rank-2 mask required");
  for (double v : m.values())
    if (v != 0.0 && v != kNegInf)
      throw std::invalid_argument(std::string(what) + ": mask entries must be 0 or -inf");
}

}  // namespace

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::vision: return "vision";
    case Modality::text: return "text";
  }
  throw std::invalid_argument("modality_name: bad tag");
}

Modality modality_from_name(const std::string& name) {
  if (name == "vision") return Modality::vision;
  if (name == "text") return Modality::text;
  throw std::invalid_argument("unknown modality: " + name);
}

void TokenGraph::validate() const {
  if (nodes < 1) throw std::invalid_argument("token graph: need at least one node");
  if (static_cast<int>(modality.size()) != nodes)
    throw std::invalid_argument("token graph: one modality tag per node required");
  std::set<std::pair<int, int>> seen;
  for (auto [i, j] : edges) {
    if (i < 0 || j < 0 || i >= nodes || j >= nodes)
      throw std::invalid_argument("token graph: edge endpoint out of range");
    std::pair<int, int> key = {std::min(i, j), std::max(i, j)};
    if (!seen.insert(key).second) throw std::invalid_argument("token graph: duplicate edge");
  }
}

TokenGraph parse_token_graph(const std::string& text) {
  TokenGraph g;
  std::istringstream in(text);
  std::string line;
  bool have_n = false, have_m = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;  // blank line
    if (first == "N") {
      if (have_n) throw std::runtime_error("graph line " + std::to_string(line_no) + ": repeated N");
      if (!(ls >> g.nodes) || g.nodes < 1)
        throw std::runtime_error("graph line " + std::to_string(line_no) + ": bad node count");
      have_n = true;
    } else if (first == "M") {
      if (!have_n) throw std::runtime_error("graph: M line before N");
      if (have_m) throw std::runtime_error("graph line " + std::to_string(line_no) + ": repeated M");
      std::string tag;
      while (ls >> tag) g.modality.push_back(modality_from_name(tag));
      if (static_cast<int>(g.modality.size()) != g.nodes)
        throw std::runtime_error("graph line " + std::to_string(line_no) +
                                 ": modality count does not match N");
      have_m = true;
    } else {
      if (!have_n || !have_m)
        throw std::runtime_error("graph line " + std::to_string(line_no) +
                                 ": edges must follow the N and M lines");
      int i = 0, j = 0;
      std::istringstream es(line);
      std::string trailing;
      if (!(es >> i >> j) || (es >> trailing))
        throw std::runtime_error("graph line " + std::to_string(line_no) + ": expected 'i j'");
      g.edges.emplace_back(i, j);
    }
  }
  if (!have_n) throw std::runtime_error("graph: missing N line");
  if (!have_m) throw std::runtime_error("graph: missing M line");
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("graph: ") + e.what());
  }
  return g;
}

TokenGraph load_token_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open graph file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_token_graph(buf.str());
}

Tensor adjacency_to_mask(const TokenGraph& graph) {
  graph.validate();
  const int n = graph.nodes;
  Tensor mask = Tensor::full({n, n}, kNegInf);
  for (int i = 0; i < n; ++i) mask.at(i, i) = 0.0;
  for (auto [i, j] : graph.edges) {
    mask.at(i, j) = 0.0;
    mask.at(j, i) = 0.0;
  }
  return mask;
}

Tensor assemble_multimodal_mask(const Tensor& vision_mask, const Tensor& text_mask) {
  check_mask(vision_mask, "assemble_multimodal_mask(vision)");
  check_mask(text_mask, "assemble_multimodal_mask(text)");
  const int nv = vision_mask.rows();
  const int nt = text_mask.rows();
  Tensor out = Tensor::zeros({nv + nt, nv + nt});  // cross-modal blocks stay zero
  for (int i = 0; i < nv; ++i)
    for (int j = 0; j < nv; ++j) out.at(i, j) = vision_mask.at(i, j);
  for (int i = 0; i < nt; ++i)
    for (int j = 0; j < nt; ++j) out.at(nv + i, nv + j) = text_mask.at(i, j);
  return out;
}

Tensor quasi_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                       const QuasiAttentionParams& params) {
  if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape().size() != 2)
    throw std::invalid_argument("quasi_attention: rank-2 inputs required");
  if (q.cols() != k.cols())
    throw std::invalid_argument("quasi_attention: q and k widths differ");
  if (k.rows() != v.rows())
    throw std::invalid_argument("quasi_attention: k and v token counts differ");
  Tensor scores = scale(matmul(q, transpose2d(k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  if (params.g_hat.defined()) {
    if (!scores.same_shape(params.g_hat))
      throw std::invalid_argument("quasi_attention: g_hat shape does not match the score matrix");
    scores = add(scores, scale(params.g_hat, params.lambda));
  }
  const Tensor* mask = nullptr;
  if (params.g.defined()) {
    if (!scores.same_shape(params.g))
      throw std::invalid_argument("quasi_attention: g shape does not match the score matrix");
    mask = &params.g;  // entry validation happens inside softmax_rows
  }
  Tensor probs = softmax_rows(scores, mask);
  return matmul(probs, v);
}

}  // namespace attnforge
