#include "attnforge/transformer.hpp"

#include <cmath>

#include "attnforge/rng.hpp"

namespace attnforge {

int ModelConfig::mlp_hidden() const {
  return static_cast<int>(std::lround(mlp_ratio * d_model));
}

void ModelConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("config: layers must be >= 1");
  if (d_model < 1 || heads < 1) throw std::invalid_argument("config: d_model and heads must be >= 1");
  if (d_model % heads != 0) throw std::invalid_argument("config: heads must divide d_model");
  if (!(mlp_ratio > 0.0)) throw std::invalid_argument("config: mlp_ratio must be positive");
  if (mlp_hidden() < 1) throw std::invalid_argument("config: mlp hidden width rounds to zero");
  if (patch_size < 1 || image_side < 1)
    throw std::invalid_argument("config: patch_size and image_side must be >= 1");
  if (image_side % patch_size != 0)
    throw std::invalid_argument("config: patch_size must divide image_side");
  if (classes < 2) throw std::invalid_argument("config: need at least two classes");
}

const char* attn_role_name(AttnRole role) {
  switch (role) {
    case AttnRole::q: return "w_q";
    case AttnRole::k: return "w_k";
    case AttnRole::v: return "w_v";
    case AttnRole::o: return "w_o";
  }
  throw std::invalid_argument("attn_role_name: bad role");
}

namespace {

Tensor trunc_normal(Rng& rng, std::vector<int> shape, double stddev = 0.02) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = rng.truncated_normal(stddev);
  return t;
}

}  // namespace

VitModel build_vit(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  VitModel m;
  m.config = config;
  const int d = config.d_model;
  m.patch_w = trunc_normal(rng, {config.patch_dim(), d});
  m.patch_b = Tensor::zeros({d});
  m.cls_token = trunc_normal(rng, {1, d});
  m.pos_embed = trunc_normal(rng, {config.tokens(), d});
  m.layers.resize(config.layers);
  for (LayerWeights& lw : m.layers) {
    lw.attn.w_q = trunc_normal(rng, {d, d});
    lw.attn.b_q = Tensor::zeros({d});
    lw.attn.w_k = trunc_normal(rng, {d, d});
    lw.attn.b_k = Tensor::zeros({d});
    lw.attn.w_v = trunc_normal(rng, {d, d});
    lw.attn.b_v = Tensor::zeros({d});
    lw.attn.w_o = trunc_normal(rng, {d, d});
    lw.attn.b_o = Tensor::zeros({d});
    lw.ln1_gain = Tensor::full({d}, 1.0);
    lw.ln1_bias = Tensor::zeros({d});
    lw.ln2_gain = Tensor::full({d}, 1.0);
    lw.ln2_bias = Tensor::zeros({d});
    lw.mlp_w1 = trunc_normal(rng, {d, config.mlp_hidden()});
    lw.mlp_b1 = Tensor::zeros({config.mlp_hidden()});
    lw.mlp_w2 = trunc_normal(rng, {config.mlp_hidden(), d});
    lw.mlp_b2 = Tensor::zeros({d});
  }
  m.final_ln_gain = Tensor::full({d}, 1.0);
  m.final_ln_bias = Tensor::zeros({d});
  m.head_w = trunc_normal(rng, {d, config.classes});
  m.head_b = Tensor::zeros({config.classes});
  return m;
}

std::vector<std::pair<std::string, Tensor>> named_tensors(const VitModel& model) {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("patch_w", model.patch_w);
  out.emplace_back("patch_b", model.patch_b);
  out.emplace_back("cls_token", model.cls_token);
  out.emplace_back("pos_embed", model.pos_embed);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerWeights& lw = model.layers[i];
    std::string p = "layer" + std::to_string(i) + ".";
    out.emplace_back(p + "w_q", lw.attn.w_q);
    out.emplace_back(p + "b_q", lw.attn.b_q);
    out.emplace_back(p + "w_k", lw.attn.w_k);
    out.emplace_back(p + "b_k", lw.attn.b_k);
    out.emplace_back(p + "w_v", lw.attn.w_v);
    out.emplace_back(p + "b_v", lw.attn.b_v);
    out.emplace_back(p + "w_o", lw.attn.w_o);
    out.emplace_back(p + "b_o", lw.attn.b_o);
    out.emplace_back(p + "ln1_gain", lw.ln1_gain);
    out.emplace_back(p + "ln1_bias", lw.ln1_bias);
    out.emplace_back(p + "ln2_gain", lw.ln2_gain);
    out.emplace_back(p + "ln2_bias", lw.ln2_bias);
    out.emplace_back(p + "mlp_w1", lw.mlp_w1);
    out.emplace_back(p + "mlp_b1", lw.mlp_b1);
    out.emplace_back(p + "mlp_w2", lw.mlp_w2);
    out.emplace_back(p + "mlp_b2", lw.mlp_b2);
    if (lw.attn_bias.defined()) out.emplace_back(p + "attn_bias", lw.attn_bias);
  }
  out.emplace_back("final_ln_gain", model.final_ln_gain);
  out.emplace_back("final_ln_bias", model.final_ln_bias);
  out.emplace_back("head_w", model.head_w);
  out.emplace_back("head_b", model.head_b);
  return out;
}

void set_all_requires_grad(VitModel& model, bool requires_grad) {
  for (auto& [name, t] : named_tensors(model)) {
    (void)name;
    Tensor handle = t;
    handle.set_requires_grad(requires_grad);
  }
}

VitModel clone_model(const VitModel& model) {
  VitModel c;
  c.config = model.config;
  c.patch_w = model.patch_w.clone();
  c.patch_b = model.patch_b.clone();
  c.cls_token = model.cls_token.clone();
  c.pos_embed = model.pos_embed.clone();
  c.layers.resize(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerWeights& s = model.layers[i];
    LayerWeights& d = c.layers[i];
    d.attn.w_q = s.attn.w_q.clone();
    d.attn.b_q = s.attn.b_q.clone();
    d.attn.w_k = s.attn.w_k.clone();
    d.attn.b_k = s.attn.b_k.clone();
    d.attn.w_v = s.attn.w_v.clone();
    d.attn.b_v = s.attn.b_v.clone();
    d.attn.w_o = s.attn.w_o.clone();
    d.attn.b_o = s.attn.b_o.clone();
    d.ln1_gain = s.ln1_gain.clone();
    d.ln1_bias = s.ln1_bias.clone();
    d.ln2_gain = s.ln2_gain.clone();
    d.ln2_bias = s.ln2_bias.clone();
    d.mlp_w1 = s.mlp_w1.clone();
    d.mlp_b1 = s.mlp_b1.clone();
    d.mlp_w2 = s.mlp_w2.clone();
    d.mlp_b2 = s.mlp_b2.clone();
    if (s.attn_bias.defined()) d.attn_bias = s.attn_bias.clone();
  }
  c.final_ln_gain = model.final_ln_gain.clone();
  c.final_ln_bias = model.final_ln_bias.clone();
  c.head_w = model.head_w.clone();
  c.head_b = model.head_b.clone();
  for (auto& [name, t] : named_tensors(c)) {
    (void)name;
    Tensor handle = t;
    handle.set_requires_grad(false);
  }
  return c;
}

Tensor extract_patches(const Tensor& image, int patch_size) {
  if (image.shape().size() != 2 || image.rows() != image.cols())
    throw std::invalid_argument("extract_patches: square rank-2 image required");
  if (patch_size < 1 || image.rows() % patch_size != 0)
    throw std::invalid_argument("extract_patches: patch_size must divide the image side");
  const int side = image.rows();
  const int per_side = side / patch_size;
  const int n_patches = per_side * per_side;
  const int dim = patch_size * patch_size;
  Tensor out = Tensor::zeros({n_patches, dim});
  for (int pr = 0; pr < per_side; ++pr)
    for (int pc = 0; pc < per_side; ++pc) {
      int p = pr * per_side + pc;
      for (int r = 0; r < patch_size; ++r)
        for (int c = 0; c < patch_size; ++c)
          out.at(p, r * patch_size + c) = image.at(pr * patch_size + r, pc * patch_size + c);
    }
  out.set_requires_grad(image.requires_grad());
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("extract_patches", {image}, out,
               [image, out, per_side, patch_size, side, dim](Tape& t) {
                 auto* go = t.adjoint_if(out);
                 if (!go) return;
                 auto& gi = t.adjoint(image);
                 for (int pr = 0; pr < per_side; ++pr)
                   for (int pc = 0; pc < per_side; ++pc) {
                     int p = pr * per_side + pc;
                     for (int r = 0; r < patch_size; ++r)
                       for (int c = 0; c < patch_size; ++c)
                         gi[static_cast<std::size_t>(pr * patch_size + r) * side +
                            pc * patch_size + c] +=
                             (*go)[static_cast<std::size_t>(p) * dim + r * patch_size + c];
                   }
               });
  }
  return out;
}

Tensor multi_head_attention(const Tensor& x, const AttentionWeights& w, int heads,
                            const Tensor& additive_bias, std::vector<Tensor>* head_maps) {
  if (x.shape().size() != 2) throw std::invalid_argument("multi_head_attention: rank-2 input");
  const int d = x.cols();
  if (heads < 1 || d % heads != 0)
    throw std::invalid_argument("multi_head_attention: heads must divide the embedding width");
  const int dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q = add_row_vector(matmul(x, w.w_q), w.b_q);
  Tensor k = add_row_vector(matmul(x, w.w_k), w.b_k);
  Tensor v = add_row_vector(matmul(x, w.w_v), w.b_v);

  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose2d(kh)), inv_scale);
    if (additive_bias.defined()) scores = add(scores, additive_bias);
    Tensor probs = softmax_rows(scores);
    if (head_maps) head_maps->push_back(probs);
    outs.push_back(matmul(probs, vh));
  }
  Tensor merged = heads == 1 ? outs[0] : concat_cols(outs);
  return add_row_vector(matmul(merged, w.w_o), w.b_o);
}

namespace {

Tensor resolved(const std::function<Tensor(int, AttnRole, const Tensor&)>& hook, int layer,
                AttnRole role, const Tensor& base) {
  if (!hook) return base;
  Tensor r = hook(layer, role, base);
  return r.defined() ? r : base;
}

}  // namespace

Tensor vit_forward(const VitModel& model, const Tensor& image, const ForwardHooks* hooks,
                   ForwardTrace* trace) {
  const ModelConfig& cfg = model.config;
  if (image.shape() != std::vector<int>{cfg.image_side, cfg.image_side})
    throw std::invalid_argument("vit_forward: image shape does not match the config");

  Tensor patches = extract_patches(image, cfg.patch_size);
  Tensor emb = add_row_vector(matmul(patches, model.patch_w), model.patch_b);
  Tensor x = add(concat_rows({model.cls_token, emb}), model.pos_embed);

  if (trace) {
    trace->attention.clear();
    trace->attention.resize(cfg.layers);
  }

  for (int layer = 0; layer < cfg.layers; ++layer) {
    const LayerWeights& lw = model.layers[layer];

    AttentionWeights eff;
    eff.w_q = resolved(hooks ? hooks->attn_weight : nullptr, layer, AttnRole::q, lw.attn.w_q);
    eff.w_k = resolved(hooks ? hooks->attn_weight : nullptr, layer, AttnRole::k, lw.attn.w_k);
    eff.w_v = resolved(hooks ? hooks->attn_weight : nullptr, layer, AttnRole::v, lw.attn.w_v);
    eff.w_o = resolved(hooks ? hooks->attn_weight : nullptr, layer, AttnRole::o, lw.attn.w_o);
    eff.b_q = resolved(hooks ? hooks->attn_bias : nullptr, layer, AttnRole::q, lw.attn.b_q);
    eff.b_k = resolved(hooks ? hooks->attn_bias : nullptr, layer, AttnRole::k, lw.attn.b_k);
    eff.b_v = resolved(hooks ? hooks->attn_bias : nullptr, layer, AttnRole::v, lw.attn.b_v);
    eff.b_o = resolved(hooks ? hooks->attn_bias : nullptr, layer, AttnRole::o, lw.attn.b_o);

    Tensor score_bias = lw.attn_bias;  // persistent buffer, usually undefined
    if (hooks && hooks->attention_additive_bias) {
      Tensor hb = hooks->attention_additive_bias(layer);
      if (hb.defined()) score_bias = score_bias.defined() ? add(score_bias, hb) : hb;
    }

    std::vector<Tensor> maps;
    Tensor normed = layer_norm_rows(x, lw.ln1_gain, lw.ln1_bias);
    Tensor attn_out = multi_head_attention(normed, eff, cfg.heads, score_bias,
                                           trace ? &maps : nullptr);
    if (trace) trace->attention[layer] = std::move(maps);
    if (hooks && hooks->after_attention) {
      Tensor wrapped = hooks->after_attention(layer, attn_out);
      if (wrapped.defined()) attn_out = wrapped;
    }
    x = add(x, attn_out);

    Tensor normed2 = layer_norm_rows(x, lw.ln2_gain, lw.ln2_bias);
    Tensor hidden = gelu(add_row_vector(matmul(normed2, lw.mlp_w1), lw.mlp_b1));
    Tensor mlp_out = add_row_vector(matmul(hidden, lw.mlp_w2), lw.mlp_b2);
    if (hooks && hooks->after_mlp) {
      Tensor wrapped = hooks->after_mlp(layer, mlp_out);
      if (wrapped.defined()) mlp_out = wrapped;
    }
    x = add(x, mlp_out);
  }

  Tensor final_norm = layer_norm_rows(x, model.final_ln_gain, model.final_ln_bias);
  Tensor cls = reshape(row(final_norm, 0), {1, cfg.d_model});
  Tensor head_w = model.head_w;
  Tensor head_b = model.head_b;
  if (hooks && hooks->head_weight) {
    Tensor hw = hooks->head_weight(head_w);
    if (hw.defined()) head_w = hw;
  }
  if (hooks && hooks->head_bias) {
    Tensor hb = hooks->head_bias(head_b);
    if (hb.defined()) head_b = hb;
  }
  Tensor logits = reshape(add_row_vector(matmul(cls, head_w), head_b), {cfg.classes});
  if (trace) trace->logits = logits;
  return logits;
}

}  // namespace attnforge
