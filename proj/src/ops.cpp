#include <algorithm>
#include <cmath>
#include <limits>

#include "attnforge/tensor.hpp"

namespace attnforge {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

void check_rank2(const Tensor& a, const char* op) {
  if (a.shape().size() != 2) throw std::invalid_argument(std::string(op) + ": rank-2 tensor required");
}

void check_rank1(const Tensor& a, const char* op) {
  if (a.shape().size() != 1) throw std::invalid_argument(std::string(op) + ": rank-1 tensor required");
}

bool want_grad(const Tensor& a) { return a.requires_grad(); }
bool want_grad(const Tensor& a, const Tensor& b) { return a.requires_grad() || b.requires_grad(); }

void mark(Tensor& out, bool rg) { out.set_requires_grad(rg); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  mark(out, want_grad(a, b));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("add", {a, b}, out, [a, b, out](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      if (a.requires_grad()) {
        auto& ga = t.adjoint(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*go)[i];
      }
      if (b.requires_grad()) {
        auto& gb = t.adjoint(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += (*go)[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  mark(out, want_grad(a, b));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("sub", {a, b}, out, [a, b, out](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      if (a.requires_grad()) {
        auto& ga = t.adjoint(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*go)[i];
      }
      if (b.requires_grad()) {
        auto& gb = t.adjoint(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= (*go)[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  mark(out, want_grad(a, b));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("mul", {a, b}, out, [a, b, out](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      if (a.requires_grad()) {
        auto& ga = t.adjoint(a);
        const auto& bv2 = b.values();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*go)[i] * bv2[i];
      }
      if (b.requires_grad()) {
        auto& gb = t.adjoint(b);
        const auto& av2 = a.values();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += (*go)[i] * av2[i];
      }
    });
  }
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
  mark(out, want_grad(a, b));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("div", {a, b}, out, [a, b, out](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      const auto& av2 = a.values();
      const auto& bv2 = b.values();
      if (a.requires_grad()) {
        auto& ga = t.adjoint(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*go)[i] / bv2[i];
      }
      if (b.requires_grad()) {
        auto& gb = t.adjoint(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= (*go)[i] * av2[i] / (bv2[i] * bv2[i]);
      }
    });
  }
  return out;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * s;
  mark(out, want_grad(a));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("scale", {a}, out, [a, out, s](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      auto& ga = t.adjoint(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*go)[i] * s;
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + s;
  mark(out, want_grad(a));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("add_scalar", {a}, out, [a, out](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      auto& ga = t.adjoint(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*go)[i];
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dims disagree");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  const double* av = a.values().data();
  const double* bv = b.values().data();
  double* ov = out.values().data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      double coef = av[i * k + p];
      if (coef == 0.0) continue;
      const double* brow = bv + p * n;
      double* orow = ov + i * n;
      for (int j = 0; j < n; ++j) orow[j] += coef * brow[j];
    }
  }
  mark(out, want_grad(a, b));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("matmul", {a, b}, out, [a, b, out, m, k, n](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      const double* g = go->data();
      if (a.requires_grad()) {
        auto& ga = t.adjoint(a);
        const double* bv2 = b.values().data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* grow = g + i * n;
            const double* brow = bv2 + p * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[static_cast<std::size_t>(i) * k + p] += acc;
          }
      }
      if (b.requires_grad()) {
        auto& gb = t.adjoint(b);
        const double* av2 = a.values().data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double coef = av2[i * k + p];
            if (coef == 0.0) continue;
            const double* grow = g + i * n;
            double* gbrow = gb.data() + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) gbrow[j] += coef * grow[j];
          }
      }
    });
  }
  return out;
}

Tensor transpose2d(const Tensor& a) {
  check_rank2(a, "transpose2d");
  const int m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  mark(out, want_grad(a));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("transpose2d", {a}, out, [a, out, m, n](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      auto& ga = t.adjoint(a);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<std::size_t>(i) * n + j] += (*go)[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  Tensor out = Tensor::scalar(acc);
  mark(out, want_grad(a));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("sum", {a}, out, [a, out](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      auto& ga = t.adjoint(a);
      for (double& g : ga) g += (*go)[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  const double inv = 1.0 / static_cast<double>(a.numel());
  Tensor out = Tensor::scalar(acc * inv);
  mark(out, want_grad(a));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("mean", {a}, out, [a, out, inv](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      auto& ga = t.adjoint(a);
      for (double& g : ga) g += (*go)[0] * inv;
    });
  }
  return out;
}

Tensor gelu(const Tensor& a) {
  static const double c = std::sqrt(2.0 / M_PI);
  constexpr double k3 = 0.044715;
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    double x = av[i];
    ov[i] = 0.5 * x * (1.0 + std::tanh(c * (x + k3 * x * x * x)));
  }
  mark(out, want_grad(a));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("gelu", {a}, out, [a, out](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      auto& ga = t.adjoint(a);
      const auto& av2 = a.values();
      for (std::size_t i = 0; i < ga.size(); ++i) {
        double x = av2[i];
        double u = c * (x + k3 * x * x * x);
        double th = std::tanh(u);
        double sech2 = 1.0 - th * th;
        double du = c * (1.0 + 3.0 * k3 * x * x);
        ga[i] += (*go)[i] * (0.5 * (1.0 + th) + 0.5 * x * sech2 * du);
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& a, const Tensor* additive_mask) {
  check_rank2(a, "softmax_rows");
  if (additive_mask) {
    check_same_shape(a, *additive_mask, "softmax_rows");
    for (double mv : additive_mask->values())
      if (mv != 0.0 && mv != kNegInf)
        throw std::invalid_argument("softmax_rows: mask entries must be 0 or -inf");
  }
  const int m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({m, n});
  const auto& av = a.values();
  auto& ov = out.values();
  for (int i = 0; i < m; ++i) {
    double best = kNegInf;
    for (int j = 0; j < n; ++j) {
      double x = av[static_cast<std::size_t>(i) * n + j];
      if (additive_mask && additive_mask->values()[static_cast<std::size_t>(i) * n + j] == kNegInf)
        continue;
      if (x > best) best = x;
    }
    if (best == kNegInf)
      throw DegenerateRowError("softmax_rows: row " + std::to_string(i) + " has every entry excluded");
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      std::size_t idx = static_cast<std::size_t>(i) * n + j;
      bool excluded =
          av[idx] == kNegInf || (additive_mask && additive_mask->values()[idx] == kNegInf);
      double e = excluded ? 0.0 : std::exp(av[idx] - best);
      ov[idx] = e;
      denom += e;
    }
    for (int j = 0; j < n; ++j) ov[static_cast<std::size_t>(i) * n + j] /= denom;
  }
  mark(out, want_grad(a));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("softmax_rows", {a}, out, [a, out, m, n](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      auto& ga = t.adjoint(a);
      const auto& pv = out.values();
      for (int i = 0; i < m; ++i) {
        double dot = 0.0;
        for (int j = 0; j < n; ++j) {
          std::size_t idx = static_cast<std::size_t>(i) * n + j;
          dot += (*go)[idx] * pv[idx];
        }
        for (int j = 0; j < n; ++j) {
          std::size_t idx = static_cast<std::size_t>(i) * n + j;
          ga[idx] += pv[idx] * ((*go)[idx] - dot);
        }
      }
    });
  }
  return out;
}

Tensor logsumexp_row(const Tensor& a, double lambda) {
  check_rank1(a, "logsumexp_row");
  if (!std::isfinite(lambda) || lambda == 0.0)
    throw std::invalid_argument("logsumexp_row: lambda must be finite and nonzero");
  const auto& av = a.values();
  double best = kNegInf;
  for (double v : av) best = std::max(best, lambda * v);
  double denom = 0.0;
  for (double v : av) denom += std::exp(lambda * v - best);
  Tensor out = Tensor::scalar((best + std::log(denom)) / lambda);
  mark(out, want_grad(a));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    // d/da_j = softmax(lambda * a)_j
    std::vector<double> w(av.size());
    for (std::size_t j = 0; j < av.size(); ++j) w[j] = std::exp(lambda * av[j] - best) / denom;
    tp->record("logsumexp_row", {a}, out, [a, out, w = std::move(w)](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      auto& ga = t.adjoint(a);
      for (std::size_t j = 0; j < ga.size(); ++j) ga[j] += (*go)[0] * w[j];
    });
  }
  return out;
}

Tensor kron(const Tensor& a, const Tensor& b) {
  check_rank2(a, "kron");
  check_rank2(b, "kron");
  const int m = a.rows(), n = a.cols(), p = b.rows(), q = b.cols();
  Tensor out = Tensor::zeros({m * p, n * q});
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  const int oc = n * q;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double coef = av[static_cast<std::size_t>(i) * n + j];
      for (int s = 0; s < p; ++s)
        for (int t2 = 0; t2 < q; ++t2)
          ov[static_cast<std::size_t>(i * p + s) * oc + (j * q + t2)] =
              coef * bv[static_cast<std::size_t>(s) * q + t2];
    }
  mark(out, want_grad(a, b));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("kron", {a, b}, out, [a, b, out, m, n, p, q, oc](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      const auto& av2 = a.values();
      const auto& bv2 = b.values();
      if (a.requires_grad()) {
        auto& ga = t.adjoint(a);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int s = 0; s < p; ++s)
              for (int t2 = 0; t2 < q; ++t2)
                acc += (*go)[static_cast<std::size_t>(i * p + s) * oc + (j * q + t2)] *
                       bv2[static_cast<std::size_t>(s) * q + t2];
            ga[static_cast<std::size_t>(i) * n + j] += acc;
          }
      }
      if (b.requires_grad()) {
        auto& gb = t.adjoint(b);
        for (int s = 0; s < p; ++s)
          for (int t2 = 0; t2 < q; ++t2) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < n; ++j)
                acc += (*go)[static_cast<std::size_t>(i * p + s) * oc + (j * q + t2)] *
                       av2[static_cast<std::size_t>(i) * n + j];
            gb[static_cast<std::size_t>(s) * q + t2] += acc;
          }
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int start, int count) {
  check_rank2(a, "slice_cols");
  if (start < 0 || count <= 0 || start + count > a.cols())
    throw std::invalid_argument("slice_cols: range out of bounds");
  const int m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({m, count});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < count; ++j) out.at(i, j) = a.at(i, start + j);
  mark(out, want_grad(a));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("slice_cols", {a}, out, [a, out, start, count, m, n](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      auto& ga = t.adjoint(a);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < count; ++j)
          ga[static_cast<std::size_t>(i) * n + start + j] +=
              (*go)[static_cast<std::size_t>(i) * count + j];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  int m = parts[0].rows();
  int total = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    check_rank2(p, "concat_cols");
    if (p.rows() != m) throw std::invalid_argument("concat_cols: row counts disagree");
    total += p.cols();
    rg = rg || p.requires_grad();
  }
  Tensor out = Tensor::zeros({m, total});
  int off = 0;
  for (const Tensor& p : parts) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
    off += p.cols();
  }
  mark(out, rg);
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    std::vector<Tensor> held = parts;
    tp->record("concat_cols", held, out, [held, out, m, total](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      int off2 = 0;
      for (const Tensor& p : held) {
        if (p.requires_grad()) {
          auto& gp = t.adjoint(p);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < p.cols(); ++j)
              gp[static_cast<std::size_t>(i) * p.cols() + j] +=
                  (*go)[static_cast<std::size_t>(i) * total + off2 + j];
        }
        off2 += p.cols();
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  int n = parts[0].cols();
  int total = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    check_rank2(p, "concat_rows");
    if (p.cols() != n) throw std::invalid_argument("concat_rows: column counts disagree");
    total += p.rows();
    rg = rg || p.requires_grad();
  }
  Tensor out = Tensor::zeros({total, n});
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const auto& pv = p.values();
    std::copy(pv.begin(), pv.end(), out.values().begin() + off);
    off += pv.size();
  }
  mark(out, rg);
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    std::vector<Tensor> held = parts;
    tp->record("concat_rows", held, out, [held, out](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      std::size_t off2 = 0;
      for (const Tensor& p : held) {
        if (p.requires_grad()) {
          auto& gp = t.adjoint(p);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += (*go)[off2 + i];
        }
        off2 += p.numel();
      }
    });
  }
  return out;
}

Tensor add_row_vector(const Tensor& a, const Tensor& v) {
  check_rank2(a, "add_row_vector");
  check_rank1(v, "add_row_vector");
  if (v.shape()[0] != a.cols()) throw std::invalid_argument("add_row_vector: length mismatch");
  const int m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + v.at(j);
  mark(out, want_grad(a, v));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("add_row_vector", {a, v}, out, [a, v, out, m, n](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      if (a.requires_grad()) {
        auto& ga = t.adjoint(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*go)[i];
      }
      if (v.requires_grad()) {
        auto& gv = t.adjoint(v);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gv[j] += (*go)[static_cast<std::size_t>(i) * n + j];
      }
    });
  }
  return out;
}

Tensor row(const Tensor& a, int i) {
  check_rank2(a, "row");
  if (i < 0 || i >= a.rows()) throw std::invalid_argument("row: index out of range");
  const int n = a.cols();
  Tensor out = Tensor::zeros({n});
  for (int j = 0; j < n; ++j) out.at(j) = a.at(i, j);
  mark(out, want_grad(a));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("row", {a}, out, [a, out, i, n](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      auto& ga = t.adjoint(a);
      for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(i) * n + j] += (*go)[j];
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  Tensor out = Tensor::from(shape, a.values());
  if (out.numel() != a.numel()) throw std::invalid_argument("reshape: element count must not change");
  mark(out, want_grad(a));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("reshape", {a}, out, [a, out](Tape& t) {
      auto* go = t.adjoint_if(out);
      if (!go) return;
      auto& ga = t.adjoint(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*go)[i];
    });
  }
  return out;
}

Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  check_rank2(a, "layer_norm_rows");
  check_rank1(gain, "layer_norm_rows");
  check_rank1(bias, "layer_norm_rows");
  const int m = a.rows(), n = a.cols();
  if (gain.shape()[0] != n || bias.shape()[0] != n)
    throw std::invalid_argument("layer_norm_rows: gain/bias length mismatch");
  Tensor out = Tensor::zeros({m, n});
  std::vector<double> xhat(static_cast<std::size_t>(m) * n);
  std::vector<double> inv_std(m);
  const auto& av = a.values();
  auto& ov = out.values();
  for (int i = 0; i < m; ++i) {
    const double* xr = av.data() + static_cast<std::size_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += xr[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= n;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int j = 0; j < n; ++j) {
      double xh = (xr[j] - mu) * is;
      xhat[static_cast<std::size_t>(i) * n + j] = xh;
      ov[static_cast<std::size_t>(i) * n + j] = gain.at(j) * xh + bias.at(j);
    }
  }
  mark(out, want_grad(a) || want_grad(gain, bias));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    tp->record("layer_norm_rows", {a, gain, bias}, out,
               [a, gain, bias, out, m, n, xhat = std::move(xhat),
                inv_std = std::move(inv_std)](Tape& t) {
                 auto* go = t.adjoint_if(out);
                 if (!go) return;
                 if (gain.requires_grad()) {
                   auto& gg = t.adjoint(gain);
                   for (int i = 0; i < m; ++i)
                     for (int j = 0; j < n; ++j)
                       gg[j] += (*go)[static_cast<std::size_t>(i) * n + j] *
                                xhat[static_cast<std::size_t>(i) * n + j];
                 }
                 if (bias.requires_grad()) {
                   auto& gb = t.adjoint(bias);
                   for (int i = 0; i < m; ++i)
                     for (int j = 0; j < n; ++j) gb[j] += (*go)[static_cast<std::size_t>(i) * n + j];
                 }
                 if (a.requires_grad()) {
                   auto& ga = t.adjoint(a);
                   for (int i = 0; i < m; ++i) {
                     double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                     for (int j = 0; j < n; ++j) {
                       std::size_t idx = static_cast<std::size_t>(i) * n + j;
                       double dxh = (*go)[idx] * gain.at(j);
                       mean_dxh += dxh;
                       mean_dxh_xh += dxh * xhat[idx];
                     }
                     mean_dxh /= n;
                     mean_dxh_xh /= n;
                     for (int j = 0; j < n; ++j) {
                       std::size_t idx = static_cast<std::size_t>(i) * n + j;
                       double dxh = (*go)[idx] * gain.at(j);
                       ga[idx] += inv_std[i] * (dxh - mean_dxh - xhat[idx] * mean_dxh_xh);
                     }
                   }
                 }
               });
  }
  return out;
}

Tensor cross_entropy_logits(const Tensor& logits, int label) {
  check_rank1(logits, "cross_entropy_logits");
  const int c = logits.shape()[0];
  if (label < 0 || label >= c) throw std::invalid_argument("cross_entropy_logits: label out of range");
  const auto& zv = logits.values();
  double best = zv[0];
  for (double v : zv) best = std::max(best, v);
  double denom = 0.0;
  for (double v : zv) denom += std::exp(v - best);
  double lse = best + std::log(denom);
  Tensor out = Tensor::scalar(lse - zv[static_cast<std::size_t>(label)]);
  mark(out, want_grad(logits));
  if (Tape* tp = Tape::active(); tp && out.requires_grad()) {
    std::vector<double> p(zv.size());
    for (std::size_t j = 0; j < zv.size(); ++j) p[j] = std::exp(zv[j] - best) / denom;
    tp->record("cross_entropy_logits", {logits}, out,
               [logits, out, label, p = std::move(p)](Tape& t) {
                 auto* go = t.adjoint_if(out);
                 if (!go) return;
                 auto& gz = t.adjoint(logits);
                 for (std::size_t j = 0; j < gz.size(); ++j) {
                   double delta = (static_cast<int>(j) == label) ? 1.0 : 0.0;
                   gz[j] += (*go)[0] * (p[j] - delta);
                 }
               });
  }
  return out;
}

}  // namespace attnforge
