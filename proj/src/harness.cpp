#include "attnforge/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "attnforge/rng.hpp"

namespace attnforge {
namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw std::invalid_argument("config: key '" + key + "' has value '" + value + "', expected " +
                              want);
}

long long to_ll(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &pos);
  } catch (const std::exception&) {
    bad_value(key, value, "an integer");
  }
  if (pos != value.size()) bad_value(key, value, "an integer");
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    bad_value(key, value, "an unsigned integer");
  }
  if (pos != value.size() || value.find('-') != std::string::npos)
    bad_value(key, value, "an unsigned integer");
  return v;
}

double to_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    bad_value(key, value, "a number");
  }
  if (pos != value.size()) bad_value(key, value, "a number");
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

// tracks which keys a reader consumed so leftovers can be rejected
struct ConfigReader {
  const ConfigMap& map;
  std::set<std::string> used;

  const std::string& require(const std::string& key) {
    auto it = map.find(key);
    if (it == map.end()) throw std::invalid_argument("config: missing key '" + key + "'");
    used.insert(key);
    return it->second;
  }
  int require_int(const std::string& key) {
    long long v = to_ll(key, require(key));
    if (v < -2147483648LL || v > 2147483647LL) bad_value(key, map.at(key), "a 32-bit integer");
    return static_cast<int>(v);
  }
  double require_double(const std::string& key) { return to_double(key, require(key)); }
  bool require_bool(const std::string& key) { return to_bool(key, require(key)); }
  std::uint64_t require_u64(const std::string& key) { return to_u64(key, require(key)); }

  void finish() const {
    for (const auto& [key, value] : map) {
      if (!used.count(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
};

const char* role_short_name(AttnRole role) {
  switch (role) {
    case AttnRole::q: return "q";
    case AttnRole::k: return "k";
    case AttnRole::v: return "v";
    case AttnRole::o: return "o";
  }
  throw std::invalid_argument("config: bad attention role");
}

AttnRole role_from_name(const std::string& key, const std::string& name) {
  for (AttnRole role : {AttnRole::q, AttnRole::k, AttnRole::v, AttnRole::o}) {
    if (name == role_short_name(role)) return role;
  }
  bad_value(key, name, "a role in {q, k, v, o}");
}

std::vector<AttnRole> parse_targets(const std::string& key, const std::string& value) {
  std::vector<AttnRole> roles;
  std::stringstream ss(value);
  std::string token;
  while (std::getline(ss, token, ',')) {
    roles.push_back(role_from_name(key, trim(token)));
  }
  if (roles.empty()) bad_value(key, value, "a comma list of roles");
  return roles;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string token;
  while (std::getline(ss, token, ',')) {
    out.push_back(static_cast<int>(to_ll(key, trim(token))));
  }
  if (out.empty()) bad_value(key, value, "a comma list of integers");
  return out;
}

bool method_uses_targets(Method m) {
  return m == Method::lora || m == Method::lora_fix || m == Method::kadaptation;
}
bool method_uses_bottleneck(Method m) {
  return m == Method::adapter || m == Method::adapter_drop || m == Method::compacter;
}
bool method_uses_rank(Method m) {
  return m == Method::lora || m == Method::lora_fix || m == Method::kadaptation;
}
bool method_uses_kron(Method m) { return m == Method::compacter || m == Method::kadaptation; }

// the shared train-section parser; sweep configs add their own keys on top
TrainConfig parse_train(ConfigReader& reader) {
  TrainConfig cfg;
  cfg.model.layers = reader.require_int("model.layers");
  cfg.model.d_model = reader.require_int("model.d_model");
  cfg.model.heads = reader.require_int("model.heads");
  cfg.model.mlp_ratio = reader.require_double("model.mlp_ratio");
  cfg.model.patch_size = reader.require_int("model.patch_size");
  cfg.model.image_side = reader.require_int("model.image_side");
  cfg.model.classes = reader.require_int("model.classes");
  cfg.model.seed = reader.require_u64("model.seed");

  cfg.adapter.method = method_from_name(reader.require("adapter.method"));
  Method m = cfg.adapter.method;
  if (method_uses_targets(m))
    cfg.adapter.targets = parse_targets("adapter.targets", reader.require("adapter.targets"));
  if (method_uses_bottleneck(m)) cfg.adapter.bottleneck = reader.require_int("adapter.bottleneck");
  if (method_uses_rank(m)) cfg.adapter.rank = reader.require_int("adapter.rank");
  if (method_uses_kron(m)) cfg.adapter.kron_n = reader.require_int("adapter.kron_n");
  if (m == Method::kadaptation) {
    cfg.adapter.with_bias = reader.require_bool("adapter.with_bias");
    cfg.adapter.split_slow_by_role = reader.require_bool("adapter.split_slow_by_role");
  }

  cfg.optimizer.kind = reader.require("optimizer.kind");
  cfg.optimizer.lr = reader.require_double("optimizer.lr");
  cfg.optimizer.weight_decay = reader.require_double("optimizer.weight_decay");
  if (cfg.optimizer.kind == "sgd") cfg.optimizer.momentum = reader.require_double("optimizer.momentum");

  cfg.epochs = reader.require_int("train.epochs");
  cfg.batch_size = reader.require_int("train.batch_size");
  cfg.shots = reader.require_int("train.shots");
  cfg.seed = reader.require_u64("train.seed");
  const char* env_seed = std::getenv("ATTNFORGE_SEED");
  if (env_seed && *env_seed) cfg.seed = to_u64("ATTNFORGE_SEED", env_seed);

  cfg.data_path = reader.require("data.path");
  cfg.validate();
  return cfg;
}

int argmax_index(const Tensor& logits) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(logits.numel()); ++i) {
    if (logits.values()[i] > logits.values()[best]) best = i;
  }
  return best;
}

std::uint64_t fnv1a(std::uint64_t h, const void* bytes, std::size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hash_weights(const AdaptedModel& adapted) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, t] : named_tensors(adapted.model)) {
    h = fnv1a(h, t.values().data(), t.values().size() * sizeof(double));
  }
  for (const auto& [name, t] : adapted.extra) {
    h = fnv1a(h, t.values().data(), t.values().size() * sizeof(double));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_double(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

// every field the run used, written back in config-file syntax; the seed is
// the effective one, after any environment override
ConfigMap config_echo(const TrainConfig& cfg) {
  ConfigMap m;
  m["model.layers"] = std::to_string(cfg.model.layers);
  m["model.d_model"] = std::to_string(cfg.model.d_model);
  m["model.heads"] = std::to_string(cfg.model.heads);
  m["model.mlp_ratio"] = format_double(cfg.model.mlp_ratio);
  m["model.patch_size"] = std::to_string(cfg.model.patch_size);
  m["model.image_side"] = std::to_string(cfg.model.image_side);
  m["model.classes"] = std::to_string(cfg.model.classes);
  m["model.seed"] = std::to_string(cfg.model.seed);
  m["adapter.method"] = method_name(cfg.adapter.method);
  Method method = cfg.adapter.method;
  if (method_uses_targets(method)) {
    std::string roles;
    for (AttnRole role : cfg.adapter.targets) {
      if (!roles.empty()) roles += ",";
      roles += role_short_name(role);
    }
    m["adapter.targets"] = roles;
  }
  if (method_uses_bottleneck(method)) m["adapter.bottleneck"] = std::to_string(cfg.adapter.bottleneck);
  if (method_uses_rank(method)) m["adapter.rank"] = std::to_string(cfg.adapter.rank);
  if (method_uses_kron(method)) m["adapter.kron_n"] = std::to_string(cfg.adapter.kron_n);
  if (method == Method::kadaptation) {
    m["adapter.with_bias"] = cfg.adapter.with_bias ? "true" : "false";
    m["adapter.split_slow_by_role"] = cfg.adapter.split_slow_by_role ? "true" : "false";
  }
  m["optimizer.kind"] = cfg.optimizer.kind;
  m["optimizer.lr"] = format_double(cfg.optimizer.lr);
  m["optimizer.weight_decay"] = format_double(cfg.optimizer.weight_decay);
  if (cfg.optimizer.kind == "sgd") m["optimizer.momentum"] = format_double(cfg.optimizer.momentum);
  m["train.epochs"] = std::to_string(cfg.epochs);
  m["train.batch_size"] = std::to_string(cfg.batch_size);
  m["train.shots"] = std::to_string(cfg.shots);
  m["train.seed"] = std::to_string(cfg.seed);
  m["data.path"] = cfg.data_path;
  return m;
}

Dataset load_for(const TrainConfig& cfg) {
  Dataset data = load_dataset(cfg.data_path);
  if (data.spec.image_side != cfg.model.image_side) {
    throw std::invalid_argument("train: dataset image_side " +
                                std::to_string(data.spec.image_side) +
                                " does not match model.image_side " +
                                std::to_string(cfg.model.image_side));
  }
  if (data.spec.classes != cfg.model.classes) {
    throw std::invalid_argument("train: dataset has " + std::to_string(data.spec.classes) +
                                " classes, model.classes is " +
                                std::to_string(cfg.model.classes));
  }
  return data;
}

// examples are visited in a seeded shuffled order, one tape per example, with
// gradients scaled so a batch accumulates its mean loss gradient
template <typename PreBatch, typename ForwardFn, typename PostBackward>
void run_epochs(const TrainConfig& cfg, const DatasetSplit& split, Optimizer& opt,
                const PreBatch& pre_batch, const ForwardFn& forward,
                const PostBackward& post_backward) {
  Rng order_rng(cfg.seed + 0x517cc1b727220a95ULL);
  int n = static_cast<int>(split.labels.size());
  std::vector<int> order(n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order);
    for (int at = 0; at < n; at += cfg.batch_size) {
      int batch_n = std::min(cfg.batch_size, n - at);
      opt.zero_grad();
      pre_batch();
      for (int k = 0; k < batch_n; ++k) {
        int idx = order[at + k];
        Tape tape;
        TapeScope scope(tape);
        Tensor loss;
        // numerical collapse mid-forward (overflowed scores, degenerate
        // norms) is a divergence symptom, so it gets the same advice as a
        // non-finite loss
        try {
          loss = cross_entropy_logits(forward(split.images[idx]), split.labels[idx]);
        } catch (const std::runtime_error& e) {
          throw std::runtime_error("train: forward failed at epoch " + std::to_string(epoch) +
                                   ", example " + std::to_string(idx) + ": " + e.what() +
                                   "; lower optimizer.lr");
        }
        if (!std::isfinite(loss.item())) {
          throw std::runtime_error("train: loss is not finite at epoch " +
                                   std::to_string(epoch) + ", example " + std::to_string(idx) +
                                   "; lower optimizer.lr");
        }
        tape.backward(scale(loss, 1.0 / batch_n));
      }
      post_backward();
      opt.step();
    }
  }
}

double train_in_subspace(const SweepConfig& config, int d) {
  const TrainConfig& tc = config.train;
  Dataset data = load_for(tc);
  DatasetSplit train_split = apply_shots(data.train, tc.shots, tc.model.classes);

  VitModel model = build_vit(tc.model);
  std::vector<Tensor> group = subspace_group_tensors(model, config.group, config.layers);
  std::size_t ambient = 0;
  for (const Tensor& t : group) ambient += t.numel();
  // a fresh projection per subspace size, seeded from the run seed and d
  FastfoodProjection proj =
      build_projection(static_cast<int>(ambient), d,
                       tc.seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(d + 1)));
  SubspaceHandle handle = attach_subspace(std::move(group), std::move(proj));

  // the classifier head trains directly; with a frozen random head every
  // subspace size would sit at chance accuracy
  model.head_w.set_requires_grad(true);
  model.head_b.set_requires_grad(true);
  Optimizer opt(tc.optimizer, {handle.theta, model.head_w, model.head_b});

  run_epochs(
      tc, train_split, opt, [&]() { handle.materialize(); },
      [&](const Tensor& image) { return vit_forward(model, image); },
      [&]() { handle.pull_theta_grad(); });
  handle.materialize();

  int hits = 0;
  for (std::size_t i = 0; i < data.test.labels.size(); ++i) {
    if (argmax_index(vit_forward(model, data.test.images[i])) == data.test.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.test.labels.size());
}

const char* group_name(SubspaceGroup group) {
  switch (group) {
    case SubspaceGroup::attention: return "attention";
    case SubspaceGroup::mlp: return "mlp";
    case SubspaceGroup::all: return "all";
  }
  throw std::invalid_argument("sweep: unknown subspace group");
}

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap map;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string entry = trim(line);
    if (entry.empty()) continue;
    std::size_t eq = entry.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not 'section.key = value'");
    }
    std::string key = trim(entry.substr(0, eq));
    std::string value = trim(entry.substr(eq + 1));
    if (key.empty() || key.find('.') == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) + ": key '" + key +
                                  "' needs a section prefix");
    }
    if (value.empty()) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) + ": key '" + key +
                                  "' has no value");
    }
    if (map.count(key)) throw std::invalid_argument("config: duplicate key '" + key + "'");
    map[key] = value;
  }
  return map;
}

ConfigMap load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str());
}

void OptimizerConfig::validate() const {
  if (kind != "sgd" && kind != "adamw") {
    throw std::invalid_argument("optimizer: kind must be sgd or adamw, got '" + kind + "'");
  }
  if (!(std::isfinite(lr) && lr > 0.0)) throw std::invalid_argument("optimizer: lr must be > 0");
  if (!(std::isfinite(weight_decay) && weight_decay >= 0.0)) {
    throw std::invalid_argument("optimizer: weight_decay must be >= 0");
  }
  if (!(std::isfinite(momentum) && momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("optimizer: momentum must be in [0, 1)");
  }
  if (kind == "adamw" && momentum != 0.0) {
    throw std::invalid_argument("optimizer: momentum applies to sgd only");
  }
}

void TrainConfig::validate() const {
  model.validate();
  adapter.validate(model);
  optimizer.validate();
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (shots < 0) throw std::invalid_argument("train: shots must be >= 0");
  if (data_path.empty()) throw std::invalid_argument("train: data.path is required");
}

TrainConfig train_config_from_map(const ConfigMap& map) {
  ConfigReader reader{map, {}};
  TrainConfig cfg = parse_train(reader);
  reader.finish();
  return cfg;
}

DatasetSpec dataset_spec_from_map(const ConfigMap& map) {
  ConfigReader reader{map, {}};
  DatasetSpec spec;
  spec.generator = reader.require("dataset.generator");
  spec.image_side = reader.require_int("dataset.image_side");
  spec.classes = reader.require_int("dataset.classes");
  spec.train_size = reader.require_int("dataset.train_size");
  spec.val_size = reader.require_int("dataset.val_size");
  spec.test_size = reader.require_int("dataset.test_size");
  spec.label_noise = reader.require_double("dataset.label_noise");
  spec.seed = reader.require_u64("dataset.seed");
  reader.finish();
  spec.validate();
  return spec;
}

Optimizer::Optimizer(OptimizerConfig config, std::vector<Tensor> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  if (params_.empty()) throw std::invalid_argument("optimizer: no parameters");
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].numel(), 0.0);
    v_[i].assign(params_[i].numel(), 0.0);
  }
}

void Optimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Optimizer::step() {
  if (config_.kind == "sgd") {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      std::vector<double>& w = params_[i].values();
      const std::vector<double>* g = params_[i].grad_if();
      std::vector<double>& m = m_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        double grad = (g ? (*g)[j] : 0.0) + config_.weight_decay * w[j];
        m[j] = config_.momentum * m[j] + grad;
        w[j] -= config_.lr * m[j];
      }
    }
    return;
  }
  // adamw
  ++t_;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    std::vector<double>& w = params_[i].values();
    const std::vector<double>* g = params_[i].grad_if();
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      double grad = g ? (*g)[j] : 0.0;
      m[j] = b1 * m[j] + (1.0 - b1) * grad;
      v[j] = b2 * v[j] + (1.0 - b2) * grad * grad;
      double m_hat = m[j] / c1;
      double v_hat = v[j] / c2;
      w[j] -= config_.lr * m_hat / (std::sqrt(v_hat) + eps);
      w[j] -= config_.lr * config_.weight_decay * w[j];
    }
  }
}

double pe_metric(double score, long long params) {
  if (!std::isfinite(score) || score < 0.0 || score > 100.0) {
    throw std::invalid_argument("pe_metric: score must be in [0, 1] or a percentage up to 100");
  }
  if (params < 0) throw std::invalid_argument("pe_metric: params must be >= 0");
  double s = score > 1.0 ? score / 100.0 : score;
  return s * std::exp(-std::log10(static_cast<double>(params) / 1e8 + 1.0));
}

std::string run_report_to_json(const RunReport& report) {
  json j;
  j["method"] = report.method;
  j["accuracy"] = report.accuracy;
  j["exact_params"] = report.exact_params;
  j["closed_form_params"] =
      report.closed_form_params ? json(*report.closed_form_params) : json(nullptr);
  j["pe"] = report.pe;
  j["seconds"] = report.seconds;
  j["seed"] = report.seed;
  j["model_hash"] = report.model_hash;
  j["config"] = report.config;
  return j.dump(2);
}

RunReport run_report_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("report: malformed json");
  RunReport report;
  try {
    report.method = j.at("method").get<std::string>();
    report.accuracy = j.at("accuracy").get<double>();
    report.exact_params = j.at("exact_params").get<long long>();
    if (!j.at("closed_form_params").is_null()) {
      report.closed_form_params = j.at("closed_form_params").get<long long>();
    }
    report.pe = j.at("pe").get<double>();
    report.seconds = j.at("seconds").get<double>();
    report.seed = j.at("seed").get<std::uint64_t>();
    report.model_hash = j.value("model_hash", std::string());
    if (j.contains("config")) report.config = j.at("config").get<ConfigMap>();
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("report: ") + e.what());
  }
  return report;
}

DatasetSplit apply_shots(const DatasetSplit& split, int shots, int classes) {
  if (shots < 0) throw std::invalid_argument("apply_shots: shots must be >= 0");
  if (classes < 1) throw std::invalid_argument("apply_shots: classes must be >= 1");
  if (shots == 0) return split;
  if (split.images.size() != split.labels.size()) {
    throw std::invalid_argument("apply_shots: images and labels disagree");
  }
  std::vector<int> taken(classes, 0);
  DatasetSplit out;
  for (std::size_t i = 0; i < split.labels.size(); ++i) {
    int label = split.labels[i];
    if (label < 0 || label >= classes) throw std::invalid_argument("apply_shots: label out of range");
    if (taken[label] >= shots) continue;
    ++taken[label];
    out.images.push_back(split.images[i]);
    out.labels.push_back(label);
  }
  return out;
}

RunReport train(const TrainConfig& config) {
  config.validate();
  Dataset data = load_for(config);
  DatasetSplit train_split = apply_shots(data.train, config.shots, config.model.classes);

  VitModel base = build_vit(config.model);
  AdaptedModel adapted = instantiate(config.adapter, base, config.seed);
  std::vector<Tensor> params;
  for (const auto& [name, tensor] : trainable_tensors(adapted)) params.push_back(tensor);
  Optimizer opt(config.optimizer, std::move(params));

  auto started = std::chrono::steady_clock::now();
  run_epochs(
      config, train_split, opt, []() {},
      [&](const Tensor& image) { return adapted.forward(image); }, []() {});

  int hits = 0;
  for (std::size_t i = 0; i < data.test.labels.size(); ++i) {
    if (argmax_index(adapted.forward(data.test.images[i])) == data.test.labels[i]) ++hits;
  }
  double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  ParamReport counts = exact_param_count(adapted, true);
  RunReport report;
  report.method = method_name(config.adapter.method);
  report.accuracy = static_cast<double>(hits) / static_cast<double>(data.test.labels.size());
  report.exact_params = counts.exact_count;
  report.closed_form_params = counts.closed_form_count;
  report.pe = pe_metric(report.accuracy, report.exact_params);
  report.seconds = seconds;
  report.seed = config.seed;
  report.model_hash = hash_weights(adapted);
  report.config = config_echo(config);
  return report;
}

std::vector<RunReport> compare_order(std::vector<RunReport> reports) {
  std::sort(reports.begin(), reports.end(), [](const RunReport& a, const RunReport& b) {
    if (a.pe != b.pe) return a.pe > b.pe;
    return a.method < b.method;
  });
  return reports;
}

std::string compare_csv(const std::vector<RunReport>& reports) {
  std::vector<RunReport> rows = compare_order(reports);
  std::ostringstream out;
  out << "method,accuracy,exact_params,closed_form_params,pe,seconds\n";
  char acc[32], pe[32], sec[32];
  for (const RunReport& r : rows) {
    std::snprintf(acc, sizeof acc, "%.6f", r.accuracy);
    std::snprintf(pe, sizeof pe, "%.6f", r.pe);
    std::snprintf(sec, sizeof sec, "%.3f", r.seconds);
    out << r.method << ',' << acc << ',' << r.exact_params << ',';
    if (r.closed_form_params) out << *r.closed_form_params;
    out << ',' << pe << ',' << sec << '\n';
  }
  return out.str();
}

std::string compare_json(const std::vector<RunReport>& reports) {
  std::vector<RunReport> rows = compare_order(reports);
  json arr = json::array();
  for (const RunReport& r : rows) {
    json j;
    j["method"] = r.method;
    j["accuracy"] = r.accuracy;
    j["exact_params"] = r.exact_params;
    j["closed_form_params"] = r.closed_form_params ? json(*r.closed_form_params) : json(nullptr);
    j["pe"] = r.pe;
    j["seconds"] = r.seconds;
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

SweepConfig sweep_config_from_map(const ConfigMap& map) {
  ConfigReader reader{map, {}};
  SweepConfig cfg;
  cfg.train = parse_train(reader);
  if (cfg.train.adapter.method != Method::full_ft) {
    throw std::invalid_argument(
        "sweep: the reference run tunes the full model; set adapter.method = full_ft");
  }
  const std::string& group = reader.require("subspace.group");
  if (group == "attention") {
    cfg.group = SubspaceGroup::attention;
  } else if (group == "mlp") {
    cfg.group = SubspaceGroup::mlp;
  } else if (group == "all") {
    cfg.group = SubspaceGroup::all;
  } else {
    bad_value("subspace.group", group, "attention, mlp, or all");
  }
  const std::string& layers = reader.require("subspace.layers");
  if (layers == "all") {
    cfg.layers.resize(cfg.train.model.layers);
    std::iota(cfg.layers.begin(), cfg.layers.end(), 0);
  } else {
    cfg.layers = parse_int_list("subspace.layers", layers);
  }
  cfg.threshold = reader.require_double("subspace.threshold");
  if (!(std::isfinite(cfg.threshold) && cfg.threshold >= 0.0)) {
    throw std::invalid_argument("sweep: subspace.threshold must be >= 0");
  }
  reader.finish();
  return cfg;
}

SweepResult sweep_intrinsic(const SweepConfig& config, const std::vector<int>& d_grid) {
  config.train.validate();
  if (config.layers.empty()) throw std::invalid_argument("sweep: empty layer selection");
  if (!(std::isfinite(config.threshold) && config.threshold >= 0.0)) {
    throw std::invalid_argument("sweep: threshold must be >= 0");
  }
  RunReport reference = train(config.train);
  IntrinsicSearchResult search = intrinsic_dim_search(
      [&](int d) { return train_in_subspace(config, d); }, d_grid, config.threshold,
      reference.accuracy);
  SweepResult result;
  result.group = group_name(config.group);
  result.threshold = config.threshold;
  result.reference_accuracy = reference.accuracy;
  result.search = search;
  return result;
}

std::string sweep_result_to_json(const SweepResult& result) {
  json rows = json::array();
  for (const IntrinsicSearchRow& row : result.search.rows) {
    rows.push_back({{"d", row.d}, {"accuracy", row.accuracy}, {"qualified", row.qualified}});
  }
  json j;
  j["group"] = result.group;
  j["threshold"] = result.threshold;
  j["reference_accuracy"] = result.reference_accuracy;
  j["split"] = "test";  // qualification compares held-out test accuracies
  j["rows"] = rows;
  j["d_t"] = result.search.d_t;
  j["reached"] = result.search.reached;
  return j.dump(2);
}

}  // namespace attnforge
