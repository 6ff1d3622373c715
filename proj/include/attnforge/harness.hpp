#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "attnforge/adapters.hpp"
#include "attnforge/datasets.hpp"
#include "attnforge/subspace.hpp"
#include "attnforge/transformer.hpp"

namespace attnforge {

// ===== configuration files =====
//
// Line-oriented "section.key = value" text. '#' starts a comment, blank lines
// are skipped. Keys must be dotted and unique; readers reject keys they do
// not understand, so a typo never turns into a silent default.

using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_text(const std::string& text);  // throws std::invalid_argument
ConfigMap load_config(const std::string& path);        // throws std::runtime_error on io

struct OptimizerConfig {
  std::string kind = "sgd";  // "sgd" or "adamw"
  double lr = 0.01;
  double weight_decay = 0.0;
  double momentum = 0.0;  // sgd only

  void validate() const;  // throws std::invalid_argument
};

struct TrainConfig {
  ModelConfig model;
  AdapterSpec adapter;
  OptimizerConfig optimizer;
  int epochs = 1;
  int batch_size = 32;
  int shots = 0;  // per-class cap on train examples; 0 keeps every example
  std::uint64_t seed = 1;
  std::string data_path;

  void validate() const;
};

// keys: model.* (layers, d_model, heads, mlp_ratio, patch_size, image_side,
// classes, seed), adapter.method plus the knobs that method uses,
// optimizer.{kind, lr, weight_decay, momentum (sgd)}, train.{epochs,
// batch_size, shots, seed}, data.path. The ATTNFORGE_SEED environment
// variable, when set, overrides train.seed.
TrainConfig train_config_from_map(const ConfigMap& map);

// keys: dataset.{generator, image_side, classes, train_size, val_size,
// test_size, label_noise, seed}
DatasetSpec dataset_spec_from_map(const ConfigMap& map);

// ===== optimizers =====
//
// sgd: classic momentum with coupled L2 (grad += weight_decay * w).
// adamw: beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected moments, decoupled
// decay applied after the adaptive step.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::vector<Tensor> params);

  void step();  // consumes .grad of every parameter
  void zero_grad();

 private:
  OptimizerConfig config_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  long long t_ = 0;
};

// ===== parameter-efficiency score =====
//
// score * exp(-log10(params / 1e8 + 1)). Accepts score in [0, 1] or a
// percentage in (1, 100], normalized internally; params must be >= 0.
double pe_metric(double score, long long params);

// ===== training runs =====

struct RunReport {
  std::string method;
  double accuracy = 0.0;  // stored in [0, 1]
  long long exact_params = 0;
  std::optional<long long> closed_form_params;
  double pe = 0.0;
  double seconds = 0.0;
  std::uint64_t seed = 0;
  std::string model_hash;  // fnv1a over the trained weights
  ConfigMap config;        // canonical echo of the run configuration
};

std::string run_report_to_json(const RunReport& report);
RunReport run_report_from_json(const std::string& text);  // throws std::runtime_error

// keeps the first `shots` examples of each class, preserving order; 0 keeps
// everything
DatasetSplit apply_shots(const DatasetSplit& split, int shots, int classes);

// loads the dataset, instantiates the adaptation method over a freshly built
// backbone, trains only the trainable tensors, reports test accuracy
RunReport train(const TrainConfig& config);

// ===== method comparison =====

// rows sorted by pe descending, ties broken by method name
std::vector<RunReport> compare_order(std::vector<RunReport> reports);
// header: method,accuracy,exact_params,closed_form_params,pe,seconds
std::string compare_csv(const std::vector<RunReport>& reports);
std::string compare_json(const std::vector<RunReport>& reports);  // full precision mirror

// ===== intrinsic-dimension sweep =====

struct SweepConfig {
  TrainConfig train;
  SubspaceGroup group = SubspaceGroup::all;
  std::vector<int> layers;  // layer indices the subspace covers
  double threshold = 0.9;   // fraction of the full-tuning reference accuracy
};

// adds subspace.{group, layers, threshold} on top of the train keys; layers
// is a comma list of indices or "all"
SweepConfig sweep_config_from_map(const ConfigMap& map);

struct SweepResult {
  std::string group;
  double threshold = 0.0;
  double reference_accuracy = 0.0;
  IntrinsicSearchResult search;
};

// trains the full model as the reference, then walks the ascending d grid
// training only the projected coordinates (plus the classifier head), and
// stops at the first d whose test accuracy reaches threshold * reference
SweepResult sweep_intrinsic(const SweepConfig& config, const std::vector<int>& d_grid);

std::string sweep_result_to_json(const SweepResult& result);

}  // namespace attnforge
