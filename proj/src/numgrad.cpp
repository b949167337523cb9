#include "litmas/numgrad.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "litmas/errors.hpp"

namespace litmas::ng {

namespace {

Tape& common_tape(const Value& a, const Value& b) {
  if (!a.valid() || !b.valid()) throw ContractError("use of an unbound Value");
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
  return a.tape();
}

void require_rank(const Value& v, std::size_t rank, const char* op) {
  if (v.tensor().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(v.shape()));
  }
}

void require_same_shape(const Value& a, const Value& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

}  // namespace

const Tensor& Value::tensor() const {
  if (!tape_) throw ContractError("use of an unbound Value");
  return tape_->node(id_).value;
}

const Tensor& Value::grad() const {
  if (!tape_) throw ContractError("use of an unbound Value");
  return tape_->node(id_).grad;
}

bool Value::requires_grad() const {
  return tape_ && tape_->node(id_).requires_grad;
}

Value Tape::leaf(Tensor t) {
  auto n = std::make_unique<Node>();
  n->grad = Tensor::zeros_like(t);
  n->value = std::move(t);
  n->requires_grad = true;
  nodes_.push_back(std::move(n));
  return Value(this, nodes_.size() - 1);
}

Value Tape::constant(Tensor t) {
  auto n = std::make_unique<Node>();
  n->grad = Tensor::zeros_like(t);
  n->value = std::move(t);
  nodes_.push_back(std::move(n));
  return Value(this, nodes_.size() - 1);
}

Value Tape::record(Tensor out, std::vector<Value> inputs, BackwardFn fn) {
  auto n = std::make_unique<Node>();
  n->grad = Tensor::zeros_like(out);
  n->value = std::move(out);
  n->inputs.reserve(inputs.size());
  for (const Value& v : inputs) {
    if (&v.tape() != this) throw ContractError("input recorded on another tape");
    n->inputs.push_back(v.id());
    n->requires_grad = n->requires_grad || v.requires_grad();
  }
  if (n->requires_grad) n->backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Value(this, nodes_.size() - 1);
}

void Tape::backward(const Value& root) {
  if (&root.tape() != this) throw ContractError("backward root belongs to another tape");
  if (root.tensor().numel() != 1) {
    throw ContractError("backward requires a scalar root, got " + shape_str(root.shape()));
  }
  if (backward_done_) {
    throw ContractError("backward already ran on this tape; call zero_grad() first");
  }
  backward_done_ = true;

  Node& r = *nodes_[root.id()];
  if (!r.requires_grad) return;
  r.grad[0] = 1.0;

  std::vector<const Tensor*> in;
  std::vector<Tensor*> in_grads;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = *nodes_[i];
    if (!n.requires_grad || !n.backward) continue;
    in.clear();
    in_grads.clear();
    for (std::size_t id : n.inputs) {
      Node& src = *nodes_[id];
      in.push_back(&src.value);
      in_grads.push_back(src.requires_grad ? &src.grad : nullptr);
    }
    n.backward(BackwardContext{n.value, n.grad, in, in_grads});
  }
}

void Tape::zero_grad() {
  for (auto& n : nodes_) std::fill(n->grad.data().begin(), n->grad.data().end(), 0.0);
  backward_done_ = false;
}

Value matmul(const Value& a, const Value& b) {
  Tape& tape = common_tape(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Tensor& A = a.tensor();
  const Tensor& B = b.tensor();
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(A.shape()) + " x " +
                         shape_str(B.shape()));
  }
  Tensor C({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) C[i * n + j] += aip * B[p * n + j];
    }
  }
  return tape.record(std::move(C), {a, b}, [m, k, n](const BackwardContext& ctx) {
    const Tensor& A = *ctx.inputs[0];
    const Tensor& B = *ctx.inputs[1];
    const Tensor& G = ctx.output_grad;
    if (Tensor* dA = ctx.input_grads[0]) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
          (*dA)[i * k + p] += acc;
        }
    }
    if (Tensor* dB = ctx.input_grads[1]) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) (*dB)[p * n + j] += aip * G[i * n + j];
        }
    }
  });
}

Value add_bias(const Value& x, const Value& bias) {
  Tape& tape = common_tape(x, bias);
  require_rank(x, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  const Tensor& X = x.tensor();
  const std::size_t m = X.rows(), n = X.cols();
  if (bias.tensor().numel() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs input " +
                         shape_str(X.shape()));
  }
  Tensor out = X;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.tensor()[j];
  return tape.record(std::move(out), {x, bias}, [m, n](const BackwardContext& ctx) {
    const Tensor& G = ctx.output_grad;
    if (Tensor* dx = ctx.input_grads[0]) {
      for (std::size_t i = 0; i < m * n; ++i) (*dx)[i] += G[i];
    }
    if (Tensor* db = ctx.input_grads[1]) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*db)[j] += G[i * n + j];
    }
  });
}

Value add(const Value& a, const Value& b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a, b, "add");
  Tensor out = a.tensor();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.tensor()[i];
  return tape.record(std::move(out), {a, b}, [](const BackwardContext& ctx) {
    for (Tensor* d : ctx.input_grads) {
      if (!d) continue;
      for (std::size_t i = 0; i < d->numel(); ++i) (*d)[i] += ctx.output_grad[i];
    }
  });
}

Value mul(const Value& a, const Value& b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a, b, "mul");
  Tensor out = a.tensor();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.tensor()[i];
  return tape.record(std::move(out), {a, b}, [](const BackwardContext& ctx) {
    const Tensor& G = ctx.output_grad;
    if (Tensor* da = ctx.input_grads[0]) {
      for (std::size_t i = 0; i < da->numel(); ++i) (*da)[i] += G[i] * (*ctx.inputs[1])[i];
    }
    if (Tensor* db = ctx.input_grads[1]) {
      for (std::size_t i = 0; i < db->numel(); ++i) (*db)[i] += G[i] * (*ctx.inputs[0])[i];
    }
  });
}

Value scale(const Value& x, double factor) {
  Tensor out = x.tensor();
  for (double& v : out.data()) v *= factor;
  return x.tape().record(std::move(out), {x}, [factor](const BackwardContext& ctx) {
    Tensor& d = *ctx.input_grads[0];
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] += factor * ctx.output_grad[i];
  });
}

Value relu(const Value& x) {
  Tensor out = x.tensor();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.tape().record(std::move(out), {x}, [](const BackwardContext& ctx) {
    const Tensor& X = *ctx.inputs[0];
    Tensor& d = *ctx.input_grads[0];
    for (std::size_t i = 0; i < d.numel(); ++i) {
      if (X[i] > 0.0) d[i] += ctx.output_grad[i];
    }
  });
}

Value log_softmax(const Value& x) {
  const Tensor& X = x.tensor();
  std::size_t rows = 1, cols = 0;
  if (X.rank() == 1) {
    cols = X.dim(0);
  } else if (X.rank() == 2) {
    rows = X.rows();
    cols = X.cols();
  } else {
    throw DimensionError("log_softmax: expected rank 1 or 2, got " + shape_str(X.shape()));
  }
  if (rows == 0 || cols == 0) throw DimensionError("log_softmax: empty input");

  Tensor out = X;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data().data() + r * cols;
    const std::size_t arg = static_cast<std::size_t>(std::max_element(row, row + cols) - row);
    const double mx = row[arg];
    // The max term contributes exactly 1, so log1p keeps the tail's precision.
    double rest = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (j != arg) rest += std::exp(row[j] - mx);
    }
    const double tail = std::log1p(rest);
    for (std::size_t j = 0; j < cols; ++j) row[j] = (row[j] - mx) - tail;
  }
  return x.tape().record(std::move(out), {x}, [rows, cols](const BackwardContext& ctx) {
    Tensor& d = *ctx.input_grads[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      double gsum = 0.0;
      for (std::size_t j = 0; j < cols; ++j) gsum += ctx.output_grad[o + j];
      for (std::size_t j = 0; j < cols; ++j) {
        d[o + j] += ctx.output_grad[o + j] - std::exp(ctx.output[o + j]) * gsum;
      }
    }
  });
}

Value cosine_rows(const Value& z, const Value& c) {
  Tape& tape = common_tape(z, c);
  require_rank(z, 2, "cosine_rows");
  require_rank(c, 1, "cosine_rows");
  const Tensor& Z = z.tensor();
  const Tensor& C = c.tensor();
  const std::size_t n = Z.rows(), d = Z.cols();
  if (C.numel() != d) {
    throw DimensionError("cosine_rows: center " + shape_str(C.shape()) + " vs rows " +
                         shape_str(Z.shape()));
  }

  double cc = 0.0;
  for (std::size_t j = 0; j < d; ++j) cc += C[j] * C[j];
  const double nc = std::sqrt(cc);
  if (!(nc > kCosineEps)) {
    throw DegenerateEmbeddingError("cosine_rows: center norm " + std::to_string(nc) +
                                   " is at or below 1e-12");
  }

  Tensor out({n});
  std::vector<double> nz(n);
  for (std::size_t i = 0; i < n; ++i) {
    double zz = 0.0, zc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      zz += Z[i * d + j] * Z[i * d + j];
      zc += Z[i * d + j] * C[j];
    }
    nz[i] = std::sqrt(zz);
    if (!(nz[i] > kCosineEps)) {
      throw DegenerateEmbeddingError("cosine_rows: row " + std::to_string(i) + " norm " +
                                     std::to_string(nz[i]) + " is at or below 1e-12");
    }
    out[i] = zc / (nz[i] * nc);
  }

  return tape.record(std::move(out), {z, c},
                     [n, d, nc, nz = std::move(nz)](const BackwardContext& ctx) {
    const Tensor& Z = *ctx.inputs[0];
    const Tensor& C = *ctx.inputs[1];
    const Tensor& s = ctx.output;
    const Tensor& G = ctx.output_grad;
    Tensor* dZ = ctx.input_grads[0];
    Tensor* dC = ctx.input_grads[1];
    for (std::size_t i = 0; i < n; ++i) {
      const double g = G[i];
      if (g == 0.0) continue;
      const double inv = 1.0 / (nz[i] * nc);
      if (dZ) {
        const double zk = s[i] / (nz[i] * nz[i]);
        for (std::size_t j = 0; j < d; ++j) {
          (*dZ)[i * d + j] += g * (C[j] * inv - zk * Z[i * d + j]);
        }
      }
      if (dC) {
        const double ck = s[i] / (nc * nc);
        for (std::size_t j = 0; j < d; ++j) {
          (*dC)[j] += g * (Z[i * d + j] * inv - ck * C[j]);
        }
      }
    }
  });
}

Value reduce(const Value& x, Reduction kind) {
  const Tensor& X = x.tensor();
  const std::size_t n = X.numel();
  if (n == 0) throw DimensionError("reduce: empty input");
  double s = 0.0;
  for (double v : X.data()) s += v;
  const double factor = kind == Reduction::mean ? 1.0 / static_cast<double>(n) : 1.0;
  return x.tape().record(Tensor::scalar(s * factor), {x}, [factor](const BackwardContext& ctx) {
    Tensor& d = *ctx.input_grads[0];
    const double g = ctx.output_grad[0] * factor;
    for (double& v : d.data()) v += g;
  });
}

Value gather_rows(const Value& x, std::span<const std::size_t> index) {
  const Tensor& X = x.tensor();
  if (X.rank() != 1 && X.rank() != 2) {
    throw DimensionError("gather_rows: expected rank 1 or 2, got " + shape_str(X.shape()));
  }
  const std::size_t n = X.dim(0);
  const std::size_t w = X.rank() == 2 ? X.cols() : 1;
  Shape shape = X.shape();
  shape[0] = index.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= n) {
      throw DimensionError("gather_rows: index " + std::to_string(index[r]) +
                           " out of range " + std::to_string(n));
    }
    std::copy_n(X.data().begin() + index[r] * w, w, out.data().begin() + r * w);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return x.tape().record(std::move(out), {x}, [w, idx = std::move(idx)](const BackwardContext& ctx) {
    Tensor& d = *ctx.input_grads[0];
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < w; ++j) d[idx[r] * w + j] += ctx.output_grad[r * w + j];
  });
}

Value pick_columns(const Value& x, std::span<const std::size_t> cols) {
  require_rank(x, 2, "pick_columns");
  const Tensor& X = x.tensor();
  const std::size_t n = X.rows(), c = X.cols();
  if (cols.size() != n) {
    throw DimensionError("pick_columns: " + std::to_string(cols.size()) + " columns for " +
                         std::to_string(n) + " rows");
  }
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    if (cols[i] >= c) throw DimensionError("pick_columns: column out of range");
    out[i] = X[i * c + cols[i]];
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return x.tape().record(std::move(out), {x}, [c, idx = std::move(idx)](const BackwardContext& ctx) {
    Tensor& d = *ctx.input_grads[0];
    for (std::size_t i = 0; i < idx.size(); ++i) d[i * c + idx[i]] += ctx.output_grad[i];
  });
}

Value scatter_rows(std::span<const Value> parts,
                   std::span<const std::vector<std::size_t>> positions, std::size_t n) {
  if (parts.empty()) throw DimensionError("scatter_rows: no parts");
  if (parts.size() != positions.size()) {
    throw DimensionError("scatter_rows: parts and position lists differ in count");
  }
  Tape& tape = parts.front().tape();
  const Tensor& first = parts.front().tensor();
  Shape shape = first.shape();
  if (shape.empty()) throw DimensionError("scatter_rows: scalar part");
  const std::size_t w = shape_numel(Shape(shape.begin() + 1, shape.end()));
  shape[0] = n;
  Tensor out(shape);
  std::vector<char> covered(n, 0);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& P = parts[p].tensor();
    Shape expect = shape;
    expect[0] = positions[p].size();
    if (P.shape() != expect) {
      throw DimensionError("scatter_rows: part " + std::to_string(p) + " has shape " +
                           shape_str(P.shape()) + ", expected " + shape_str(expect));
    }
    for (std::size_t r = 0; r < positions[p].size(); ++r) {
      const std::size_t dst = positions[p][r];
      if (dst >= n || covered[dst]) {
        throw DimensionError("scatter_rows: output row " + std::to_string(dst) +
                             " out of range or covered twice");
      }
      covered[dst] = 1;
      std::copy_n(P.data().begin() + r * w, w, out.data().begin() + dst * w);
    }
  }
  if (std::find(covered.begin(), covered.end(), 0) != covered.end()) {
    throw DimensionError("scatter_rows: output rows left uncovered");
  }
  std::vector<std::vector<std::size_t>> pos(positions.begin(), positions.end());
  return tape.record(std::move(out), std::vector<Value>(parts.begin(), parts.end()),
                     [w, pos = std::move(pos)](const BackwardContext& ctx) {
    for (std::size_t p = 0; p < pos.size(); ++p) {
      Tensor* d = ctx.input_grads[p];
      if (!d) continue;
      for (std::size_t r = 0; r < pos[p].size(); ++r)
        for (std::size_t j = 0; j < w; ++j) (*d)[r * w + j] += ctx.output_grad[pos[p][r] * w + j];
    }
  });
}

Value stop_gradient(const Value& x) { return x.tape().constant(x.tensor()); }

}  // namespace litmas::ng
