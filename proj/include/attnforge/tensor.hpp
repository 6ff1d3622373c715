#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace attnforge {

// thrown by softmax_rows when a row has every entry excluded
struct DegenerateRowError : std::runtime_error {
  explicit DegenerateRowError(const std::string& what) : std::runtime_error(what) {}
};

// ===== Tensor =====
//
// Dense row-major f64 tensor. Handles share storage (shallow copy); ops
// return fresh tensors. Rank 0 is a scalar: empty shape, one value.

struct TensorData {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward sweep touches it
  bool requires_grad = false;
  std::uint64_t id = 0;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const std::vector<int>& shape() const;
  std::size_t numel() const;
  int rows() const;  // rank-2 only
  int cols() const;  // rank-2 only

  double& at(int i);
  double at(int i) const;
  double& at(int i, int j);
  double at(int i, int j) const;
  double item() const;  // numel() == 1

  std::vector<double>& values();
  const std::vector<double>& values() const;

  bool requires_grad() const;
  void set_requires_grad(bool rg);

  // allocated (zero-filled) on first access; frozen tensors never allocate
  std::vector<double>& grad();
  const std::vector<double>* grad_if() const;
  void zero_grad();

  std::uint64_t id() const;
  TensorData* raw() const { return d_.get(); }

  // deep copy of values/shape; grad not copied
  Tensor clone() const;

  bool same_shape(const Tensor& other) const;

 private:
  std::shared_ptr<TensorData> d_;
  void require_defined() const;
};

// ===== Tape =====
//
// Ordered list of primitive-operation records, appended in execution order
// (hence already topologically sorted). backward() seeds d(loss)/d(loss) = 1,
// sweeps the records in reverse through per-sweep adjoint buffers, then
// accumulates adjoints into .grad of every requires_grad tensor reached.
// Calling backward twice without zeroing grads accumulates, as with any
// gradient tape.

class Tape {
 public:
  struct Record {
    const char* op;
    std::vector<std::uint64_t> input_ids;
    std::uint64_t output_id;
    std::function<void(Tape&)> pull;
  };

  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }

  // adjoint buffers; valid only while a backward sweep runs
  std::vector<double>* adjoint_if(const Tensor& t);
  std::vector<double>& adjoint(const Tensor& t);

  void record(const char* op, std::initializer_list<Tensor> inputs, const Tensor& output,
              std::function<void(Tape&)> pull);
  void record(const char* op, const std::vector<Tensor>& inputs, const Tensor& output,
              std::function<void(Tape&)> pull);

  static Tape* active();

 private:
  std::vector<Record> records_;
  // key by node pointer; keep a handle alive alongside the buffer
  std::unordered_map<const TensorData*, std::pair<Tensor, std::vector<double>>> adjoints_;
};

// installs a tape as the thread-local active tape for its scope
struct TapeScope {
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// ===== primitive ops =====
//
// All ops compute values eagerly and, when a tape is active and the result
// needs grad, record a pull closure. Shape mismatches throw
// std::invalid_argument; no implicit broadcasting beyond the ops named below.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor div(const Tensor& a, const Tensor& b);  // elementwise
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor matmul(const Tensor& a, const Tensor& b);  // rank-2 x rank-2
Tensor transpose2d(const Tensor& a);

Tensor sum(const Tensor& a);   // scalar
Tensor mean(const Tensor& a);  // scalar

Tensor gelu(const Tensor& a);  // tanh approximation

// softmax along each row of a rank-2 tensor. additive_mask, when given, must
// match the shape and hold only 0 or -infinity; -infinity entries (in mask or
// input) produce exactly-zero weights. A row with every entry excluded throws
// DegenerateRowError.
Tensor softmax_rows(const Tensor& a, const Tensor* additive_mask = nullptr);

// (1/lambda) * ln(sum_j exp(lambda * a_j)) over a rank-1 tensor, computed with
// max-subtraction; lambda must be finite and nonzero
Tensor logsumexp_row(const Tensor& a, double lambda);

// Kronecker product of rank-2 tensors: (m x n) kron (p x q) -> (m*p) x (n*q)
Tensor kron(const Tensor& a, const Tensor& b);

Tensor slice_cols(const Tensor& a, int start, int count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor add_row_vector(const Tensor& a, const Tensor& v);  // v rank-1, size a.cols()
Tensor row(const Tensor& a, int i);                       // rank-1 view copy

Tensor reshape(const Tensor& a, std::vector<int> shape);  // same numel

// per-row layer norm with learned gain/bias (rank-1, size a.cols())
Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// numerically stable -log softmax(logits)[label] over a rank-1 logits tensor
Tensor cross_entropy_logits(const Tensor& logits, int label);

// ===== gradient checking =====
//
// Compares tape gradients of a scalar-valued f against central differences.
// Per-element relative error uses denominator max(|analytic|, |numeric|,
// 1e-8); returns the max over elements. f must be pure and deterministic.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-5);

}  // namespace attnforge
