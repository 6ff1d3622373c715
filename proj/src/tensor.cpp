#include "attnforge/tensor.hpp"

#include <atomic>

namespace attnforge {

namespace {

std::atomic<std::uint64_t> next_id{1};

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: shape dims must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;  // empty shape -> 1 (scalar)
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  Tensor t;
  t.d_ = std::make_shared<TensorData>();
  t.d_->shape = std::move(shape);
  t.d_->values.assign(n, 0.0);
  t.d_->requires_grad = requires_grad;
  t.d_->id = next_id.fetch_add(1);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.d_->values) v = value;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw std::invalid_argument("tensor: value count does not match shape");
  Tensor t;
  t.d_ = std::make_shared<TensorData>();
  t.d_->shape = std::move(shape);
  t.d_->values = std::move(values);
  t.d_->requires_grad = requires_grad;
  t.d_->id = next_id.fetch_add(1);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

void Tensor::require_defined() const {
  if (!d_) throw std::runtime_error("tensor: use of undefined tensor");
}

const std::vector<int>& Tensor::shape() const {
  require_defined();
  return d_->shape;
}

std::size_t Tensor::numel() const {
  require_defined();
  return d_->values.size();
}

int Tensor::rows() const {
  require_defined();
  if (d_->shape.size() != 2) throw std::invalid_argument("tensor: rows() needs rank 2");
  return d_->shape[0];
}

int Tensor::cols() const {
  require_defined();
  if (d_->shape.size() != 2) throw std::invalid_argument("tensor: cols() needs rank 2");
  return d_->shape[1];
}

double& Tensor::at(int i) {
  require_defined();
  if (d_->shape.size() != 1) throw std::invalid_argument("tensor: at(i) needs rank 1");
  if (i < 0 || i >= d_->shape[0]) throw std::invalid_argument("tensor: index out of range");
  return d_->values[static_cast<std::size_t>(i)];
}

double Tensor::at(int i) const { return const_cast<Tensor*>(this)->at(i); }

double& Tensor::at(int i, int j) {
  require_defined();
  if (d_->shape.size() != 2) throw std::invalid_argument("tensor: at(i,j) needs rank 2");
  if (i < 0 || i >= d_->shape[0] || j < 0 || j >= d_->shape[1])
    throw std::invalid_argument("tensor: index out of range");
  return d_->values[static_cast<std::size_t>(i) * d_->shape[1] + j];
}

double Tensor::at(int i, int j) const { return const_cast<Tensor*>(this)->at(i, j); }

double Tensor::item() const {
  require_defined();
  if (d_->values.size() != 1) throw std::invalid_argument("tensor: item() needs a single element");
  return d_->values[0];
}

std::vector<double>& Tensor::values() {
  require_defined();
  return d_->values;
}

const std::vector<double>& Tensor::values() const {
  require_defined();
  return d_->values;
}

bool Tensor::requires_grad() const {
  require_defined();
  return d_->requires_grad;
}

void Tensor::set_requires_grad(bool rg) {
  require_defined();
  d_->requires_grad = rg;
}

std::vector<double>& Tensor::grad() {
  require_defined();
  if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
  return d_->grad;
}

const std::vector<double>* Tensor::grad_if() const {
  require_defined();
  return d_->grad.empty() ? nullptr : &d_->grad;
}

void Tensor::zero_grad() {
  require_defined();
  if (!d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
}

std::uint64_t Tensor::id() const {
  require_defined();
  return d_->id;
}

Tensor Tensor::clone() const {
  require_defined();
  return Tensor::from(d_->shape, d_->values, d_->requires_grad);
}

bool Tensor::same_shape(const Tensor& other) const {
  require_defined();
  return other.defined() && d_->shape == other.shape();
}

// ===== Tape =====

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = prev_; }

void Tape::record(const char* op, std::initializer_list<Tensor> inputs, const Tensor& output,
                  std::function<void(Tape&)> pull) {
  record(op, std::vector<Tensor>(inputs), output, std::move(pull));
}

void Tape::record(const char* op, const std::vector<Tensor>& inputs, const Tensor& output,
                  std::function<void(Tape&)> pull) {
  Record r;
  r.op = op;
  for (const Tensor& t : inputs) r.input_ids.push_back(t.id());
  r.output_id = output.id();
  r.pull = std::move(pull);
  records_.push_back(std::move(r));
}

std::vector<double>* Tape::adjoint_if(const Tensor& t) {
  auto it = adjoints_.find(t.raw());
  return it == adjoints_.end() ? nullptr : &it->second.second;
}

std::vector<double>& Tape::adjoint(const Tensor& t) {
  auto it = adjoints_.find(t.raw());
  if (it == adjoints_.end()) {
    auto [ins, ok] = adjoints_.emplace(t.raw(), std::make_pair(t, std::vector<double>(t.numel(), 0.0)));
    (void)ok;
    return ins->second.second;
  }
  return it->second.second;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a defined scalar");
  adjoints_.clear();
  adjoint(loss)[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    it->pull(*this);
  }
  for (auto& [ptr, entry] : adjoints_) {
    (void)ptr;
    Tensor& t = entry.first;
    if (!t.requires_grad()) continue;
    std::vector<double>& g = t.grad();
    const std::vector<double>& adj = entry.second;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += adj[i];
  }
  adjoints_.clear();
}

void Tape::clear() {
  records_.clear();
  adjoints_.clear();
}

}  // namespace attnforge
