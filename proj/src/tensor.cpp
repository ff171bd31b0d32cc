#include "layoutlab/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "layoutlab/util.hpp"

namespace layoutlab {

std::string to_hex(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    os << (i ? "," : "") << s[i];
  }
  os << "]";
  return os.str();
}

namespace {

size_t numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) {
    n *= static_cast<size_t>(d);
  }
  return n;
}

std::shared_ptr<TensorImpl> make_leaf(Shape shape, std::vector<double> data, bool rg) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = rg;
  return impl;
}

bool any_requires(const std::vector<Tensor>& xs) {
  for (const auto& x : xs) {
    if (x.requires_grad()) {
      return true;
    }
  }
  return false;
}

Tensor make_node(const char* op, Shape shape, std::vector<double> data,
                 std::vector<Tensor> parents,
                 std::function<void(const TensorImpl&)> backward_fn) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->op = op;
  impl->requires_grad = any_requires(parents);
  if (impl->requires_grad) {
    impl->parents.reserve(parents.size());
    for (auto& p : parents) {
      impl->parents.push_back(p.impl());
    }
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor(impl);
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// true when b is a rank-1 vector broadcast over the rows of rank-2 a
bool row_broadcast(const Tensor& a, const Tensor& b) {
  return a.rank() == 2 && b.rank() == 1 && a.dim(1) == b.dim(0);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// C[m,n] += A[m,k] * B[k,n]
void mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) {
        continue;
      }
      const double* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        acc += arow[p] * brow[p];
      }
      crow[j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void mm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    const double* brow = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) {
        continue;
      }
      double* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  size_t n = numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  size_t n = numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  require(numel(shape) == data.size(),
          "Tensor::from: data length " + std::to_string(data.size()) +
              " does not match shape " + shape_str(shape));
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({1}, {value}, requires_grad));
}

double Tensor::value() const {
  require(size() == 1, "Tensor::value: tensor is not scalar, shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor Tensor::clone() const {
  return Tensor(make_leaf(impl_->shape, impl_->data, impl_->requires_grad));
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  std::unordered_set<TensorImpl*> seen;
  // iterative post-order DFS
  std::vector<std::pair<std::shared_ptr<TensorImpl>, size_t>> stack;
  if (root.impl() && root.impl()->requires_grad) {
    stack.emplace_back(root.impl(), 0);
    seen.insert(root.impl().get());
  }
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      auto parent = node->parents[child++];
      if (parent->requires_grad && !seen.count(parent.get())) {
        seen.insert(parent.get());
        stack.emplace_back(parent, 0);
      }
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::zero_interior_grads() const {
  for (const auto& node : order_) {
    if (node->backward_fn) {
      node->grad.assign(node->data.size(), 0.0);
    }
  }
}

void Tape::replay_backward() const {
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const auto& node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      for (const auto& p : node->parents) {
        p->ensure_grad();
      }
      node->backward_fn(*node);
    }
  }
}

void backward(const Tensor& loss) {
  require(loss.size() == 1,
          "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) {
    return;
  }
  Tape tape = Tape::record(loss);
  tape.zero_interior_grads();
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0;
  tape.replay_backward();
}

// ---- ops ----

Tensor add(const Tensor& a, const Tensor& b) {
  if (row_broadcast(a, b)) {
    const int n = a.dim(0), d = a.dim(1);
    std::vector<double> out(a.data());
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) {
        out[static_cast<size_t>(i) * d + j] += b.at(j);
      }
    }
    auto ai = a.impl();
    auto bi = b.impl();
    return make_node("add", a.shape(), std::move(out), {a, b}, [n, d, ai, bi](const TensorImpl& self) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
          const double g = self.grad[static_cast<size_t>(i) * d + j];
          if (ai->requires_grad) ai->grad[static_cast<size_t>(i) * d + j] += g;
          if (bi->requires_grad) bi->grad[static_cast<size_t>(j)] += g;
        }
      }
    });
  }
  check_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] + b.data()[i];
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_node("add", a.shape(), std::move(out), {a, b}, [ai, bi](const TensorImpl& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      if (ai->requires_grad) ai->grad[i] += self.grad[i];
      if (bi->requires_grad) bi->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (row_broadcast(a, b)) {
    const int n = a.dim(0), d = a.dim(1);
    std::vector<double> out(a.size());
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) {
        out[static_cast<size_t>(i) * d + j] = a.at(i, j) * b.at(j);
      }
    }
    auto ai = a.impl();
    auto bi = b.impl();
    return make_node("mul", a.shape(), std::move(out), {a, b}, [n, d, ai, bi](const TensorImpl& self) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
          const size_t idx = static_cast<size_t>(i) * d + j;
          const double g = self.grad[idx];
          if (ai->requires_grad) ai->grad[idx] += g * bi->data[static_cast<size_t>(j)];
          if (bi->requires_grad) bi->grad[static_cast<size_t>(j)] += g * ai->data[idx];
        }
      }
    });
  }
  check_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] * b.data()[i];
  }
  auto ai = a.impl();
  auto bi = b.impl();
  return make_node("mul", a.shape(), std::move(out), {a, b}, [ai, bi](const TensorImpl& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      if (ai->requires_grad) ai->grad[i] += self.grad[i] * bi->data[i];
      if (bi->requires_grad) bi->grad[i] += self.grad[i] * ai->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] * c;
  }
  auto ai = a.impl();
  return make_node("scale", a.shape(), std::move(out), {a}, [ai, c](const TensorImpl& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      ai->grad[i] += self.grad[i] * c;
    }
  });
}

Tensor add_n(const std::vector<Tensor>& xs) {
  require(!xs.empty(), "add_n: empty operand list");
  for (const auto& x : xs) {
    check_same_shape("add_n", xs[0], x);
  }
  std::vector<double> out(xs[0].size(), 0.0);
  for (const auto& x : xs) {
    for (size_t i = 0; i < out.size(); ++i) {
      out[i] += x.data()[i];
    }
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  impls.reserve(xs.size());
  for (const auto& x : xs) {
    impls.push_back(x.impl());
  }
  return make_node("add_n", xs[0].shape(), std::move(out), xs, [impls](const TensorImpl& self) {
    for (const auto& p : impls) {
      if (!p->requires_grad) {
        continue;
      }
      for (size_t i = 0; i < self.grad.size(); ++i) {
        p->grad[i] += self.grad[i];
      }
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  mm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto ai = a.impl();
  auto bi = b.impl();
  return make_node("matmul", {m, n}, std::move(out), {a, b}, [m, k, n, ai, bi](const TensorImpl& self) {
    if (ai->requires_grad) {
      mm_nt(self.grad.data(), bi->data.data(), ai->grad.data(), m, n, k);
    }
    if (bi->requires_grad) {
      mm_tn(ai->data.data(), self.grad.data(), bi->grad.data(), m, k, n);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: expected rank-2, got " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out[static_cast<size_t>(j) * m + i] = a.at(i, j);
    }
  }
  auto ai = a.impl();
  return make_node("transpose", {n, m}, std::move(out), {a}, [m, n, ai](const TensorImpl& self) {
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        ai->grad[static_cast<size_t>(i) * n + j] += self.grad[static_cast<size_t>(j) * m + i];
      }
    }
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  }
  auto ai = a.impl();
  return make_node("relu", a.shape(), std::move(out), {a}, [ai](const TensorImpl& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      if (ai->data[i] > 0.0) {
        ai->grad[i] += self.grad[i];
      }
    }
  });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
    out[i] = 0.5 * x * (1.0 + t);
  }
  auto ai = a.impl();
  return make_node("gelu", a.shape(), std::move(out), {a}, [ai](const TensorImpl& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double x = ai->data[i];
      const double u = kGeluC * (x + kGeluA * x * x * x);
      const double t = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      const double dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      ai->grad[i] += self.grad[i] * dy;
    }
  });
}

namespace {

// rows/cols view: softmax and layer_norm normalize the last axis; a rank-1
// tensor is one row.
void last_axis_view(const Tensor& a, int axis, const char* op, int* rows, int* cols) {
  const int last = a.rank() - 1;
  require(axis == last || axis == -1,
          std::string(op) + ": only the last axis is supported, got axis " +
              std::to_string(axis) + " for shape " + shape_str(a.shape()));
  if (a.rank() == 1) {
    *rows = 1;
    *cols = a.dim(0);
  } else {
    *rows = a.dim(0);
    *cols = a.dim(1);
  }
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
  int rows = 0, cols = 0;
  last_axis_view(a, axis, "softmax", &rows, &cols);
  std::vector<double> out(a.size());
  for (int i = 0; i < rows; ++i) {
    const double* x = a.data().data() + static_cast<size_t>(i) * cols;
    double* y = out.data() + static_cast<size_t>(i) * cols;
    double mx = x[0];
    for (int j = 1; j < cols; ++j) {
      mx = std::max(mx, x[j]);
    }
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (int j = 0; j < cols; ++j) {
      y[j] /= z;
    }
  }
  auto ai = a.impl();
  return make_node("softmax", a.shape(), std::move(out), {a}, [rows, cols, ai](const TensorImpl& self) {
    for (int i = 0; i < rows; ++i) {
      const double* y = self.data.data() + static_cast<size_t>(i) * cols;
      const double* gy = self.grad.data() + static_cast<size_t>(i) * cols;
      double dot = 0.0;
      for (int j = 0; j < cols; ++j) {
        dot += gy[j] * y[j];
      }
      double* gx = ai->grad.data() + static_cast<size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) {
        gx[j] += (gy[j] - dot) * y[j];
      }
    }
  });
}

Tensor layer_norm(const Tensor& a, int axis, double eps) {
  int rows = 0, cols = 0;
  last_axis_view(a, axis, "layer_norm", &rows, &cols);
  std::vector<double> out(a.size());
  std::vector<double> inv_std(static_cast<size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    const double* x = a.data().data() + static_cast<size_t>(i) * cols;
    double mean = 0.0;
    for (int j = 0; j < cols; ++j) {
      mean += x[j];
    }
    mean /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
      var += (x[j] - mean) * (x[j] - mean);
    }
    var /= cols;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    double* y = out.data() + static_cast<size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) {
      y[j] = (x[j] - mean) * is;
    }
  }
  auto ai = a.impl();
  return make_node("layer_norm", a.shape(), std::move(out), {a},
                   [rows, cols, ai, inv_std](const TensorImpl& self) {
                     for (int i = 0; i < rows; ++i) {
                       const double* y = self.data.data() + static_cast<size_t>(i) * cols;
                       const double* gy = self.grad.data() + static_cast<size_t>(i) * cols;
                       double gmean = 0.0, gydot = 0.0;
                       for (int j = 0; j < cols; ++j) {
                         gmean += gy[j];
                         gydot += gy[j] * y[j];
                       }
                       gmean /= cols;
                       gydot /= cols;
                       const double is = inv_std[static_cast<size_t>(i)];
                       double* gx = ai->grad.data() + static_cast<size_t>(i) * cols;
                       for (int j = 0; j < cols; ++j) {
                         gx[j] += is * (gy[j] - gmean - y[j] * gydot);
                       }
                     }
                   });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  require(table.rank() == 2, "embedding_lookup: table must be rank-2, got " +
                                 shape_str(table.shape()));
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids) {
    require(id >= 0 && id < v, "embedding_lookup: id " + std::to_string(id) +
                                   " out of range [0," + std::to_string(v) + ")");
  }
  const int n = static_cast<int>(ids.size());
  std::vector<double> out(static_cast<size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    std::copy_n(table.data().data() + static_cast<size_t>(ids[static_cast<size_t>(i)]) * d, d,
                out.data() + static_cast<size_t>(i) * d);
  }
  auto ti = table.impl();
  return make_node("embedding_lookup", {n, d}, std::move(out), {table},
                   [ids, d, ti](const TensorImpl& self) {
                     for (size_t i = 0; i < ids.size(); ++i) {
                       const double* g = self.grad.data() + i * static_cast<size_t>(d);
                       double* tg = ti->grad.data() + static_cast<size_t>(ids[i]) * d;
                       for (int j = 0; j < d; ++j) {
                         tg[j] += g[j];
                       }
                     }
                   });
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& rows) {
  require(a.rank() == 2, "gather_rows: expected rank-2, got " + shape_str(a.shape()));
  const int n = a.dim(0), d = a.dim(1);
  for (int r : rows) {
    require(r >= 0 && r < n, "gather_rows: row " + std::to_string(r) + " out of range [0," +
                                 std::to_string(n) + ")");
  }
  const int k = static_cast<int>(rows.size());
  std::vector<double> out(static_cast<size_t>(k) * d);
  for (int i = 0; i < k; ++i) {
    std::copy_n(a.data().data() + static_cast<size_t>(rows[static_cast<size_t>(i)]) * d, d,
                out.data() + static_cast<size_t>(i) * d);
  }
  auto ai = a.impl();
  return make_node("gather_rows", {k, d}, std::move(out), {a}, [rows, d, ai](const TensorImpl& self) {
    for (size_t i = 0; i < rows.size(); ++i) {
      const double* g = self.grad.data() + i * static_cast<size_t>(d);
      double* ag = ai->grad.data() + static_cast<size_t>(rows[i]) * d;
      for (int j = 0; j < d; ++j) {
        ag[j] += g[j];
      }
    }
  });
}

Tensor mean_pool(const Tensor& a, const std::vector<int>& rows) {
  require(a.rank() == 2, "mean_pool: expected rank-2, got " + shape_str(a.shape()));
  require(!rows.empty(), "mean_pool: empty row set");
  const int n = a.dim(0), d = a.dim(1);
  for (int r : rows) {
    require(r >= 0 && r < n, "mean_pool: row " + std::to_string(r) + " out of range [0," +
                                 std::to_string(n) + ")");
  }
  std::vector<double> out(static_cast<size_t>(d), 0.0);
  for (int r : rows) {
    const double* x = a.data().data() + static_cast<size_t>(r) * d;
    for (int j = 0; j < d; ++j) {
      out[static_cast<size_t>(j)] += x[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (double& x : out) {
    x *= inv;
  }
  auto ai = a.impl();
  return make_node("mean_pool", {d}, std::move(out), {a}, [rows, d, inv, ai](const TensorImpl& self) {
    for (int r : rows) {
      double* ag = ai->grad.data() + static_cast<size_t>(r) * d;
      for (int j = 0; j < d; ++j) {
        ag[j] += self.grad[static_cast<size_t>(j)] * inv;
      }
    }
  });
}

namespace {

// shared CE kernel over [rows, v] logits; loss = mean over rows
Tensor cross_entropy_impl(const Tensor& logits, std::vector<int> targets, int rows, int v) {
  double loss = 0.0;
  std::vector<double> probs(static_cast<size_t>(rows) * v);
  for (int i = 0; i < rows; ++i) {
    const double* x = logits.data().data() + static_cast<size_t>(i) * v;
    double* p = probs.data() + static_cast<size_t>(i) * v;
    double mx = x[0];
    for (int j = 1; j < v; ++j) {
      mx = std::max(mx, x[j]);
    }
    double z = 0.0;
    for (int j = 0; j < v; ++j) {
      p[j] = std::exp(x[j] - mx);
      z += p[j];
    }
    for (int j = 0; j < v; ++j) {
      p[j] /= z;
    }
    loss -= std::log(p[targets[static_cast<size_t>(i)]]);
  }
  loss /= rows;
  auto li = logits.impl();
  return make_node("cross_entropy", {1}, {loss}, {logits},
                   [li, targets = std::move(targets), rows, v, probs = std::move(probs)](
                       const TensorImpl& self) {
                     const double g = self.grad[0] / rows;
                     for (int i = 0; i < rows; ++i) {
                       const double* p = probs.data() + static_cast<size_t>(i) * v;
                       double* gx = li->grad.data() + static_cast<size_t>(i) * v;
                       for (int j = 0; j < v; ++j) {
                         gx[j] += g * p[j];
                       }
                       gx[targets[static_cast<size_t>(i)]] -= g;
                     }
                   });
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, int target) {
  require(logits.rank() == 1, "cross_entropy: expected rank-1 logits, got " +
                                  shape_str(logits.shape()));
  const int v = logits.dim(0);
  require(target >= 0 && target < v, "cross_entropy: target " + std::to_string(target) +
                                         " out of range [0," + std::to_string(v) + ")");
  return cross_entropy_impl(logits, {target}, 1, v);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  require(logits.rank() == 2, "cross_entropy: expected rank-2 logits, got " +
                                  shape_str(logits.shape()));
  const int rows = logits.dim(0), v = logits.dim(1);
  require(static_cast<int>(targets.size()) == rows,
          "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
              std::to_string(rows) + " rows");
  require(rows >= 1, "cross_entropy: no rows");
  for (int t : targets) {
    require(t >= 0 && t < v, "cross_entropy: target " + std::to_string(t) +
                                 " out of range [0," + std::to_string(v) + ")");
  }
  return cross_entropy_impl(logits, targets, rows, v);
}

Tensor cosine_sim(const Tensor& u, const Tensor& v) {
  require(u.rank() == 1 && v.rank() == 1 && u.dim(0) == v.dim(0),
          "cosine_sim: expected equal-length vectors, got " + shape_str(u.shape()) + " and " +
              shape_str(v.shape()));
  const int d = u.dim(0);
  double dot = 0.0, nu2 = 0.0, nv2 = 0.0;
  for (int j = 0; j < d; ++j) {
    dot += u.at(j) * v.at(j);
    nu2 += u.at(j) * u.at(j);
    nv2 += v.at(j) * v.at(j);
  }
  require(nu2 > 0.0 && nv2 > 0.0, "cosine_sim: zero-norm input");
  const double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
  const double s = dot / (nu * nv);
  auto ui = u.impl();
  auto vi = v.impl();
  return make_node("cosine_sim", {1}, {s}, {u, v}, [d, nu, nv, s, ui, vi](const TensorImpl& self) {
    const double g = self.grad[0];
    for (int j = 0; j < d; ++j) {
      const double uj = ui->data[static_cast<size_t>(j)];
      const double vj = vi->data[static_cast<size_t>(j)];
      if (ui->requires_grad) {
        ui->grad[static_cast<size_t>(j)] += g * (vj / (nu * nv) - s * uj / (nu * nu));
      }
      if (vi->requires_grad) {
        vi->grad[static_cast<size_t>(j)] += g * (uj / (nu * nv) - s * vj / (nv * nv));
      }
    }
  });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  require(!xs.empty(), "concat: empty operand list");
  const int rank = xs[0].rank();
  require(axis >= 0 && axis < rank, "concat: bad axis " + std::to_string(axis));
  if (rank == 1) {
    int total = 0;
    for (const auto& x : xs) {
      require(x.rank() == 1, "concat: mixed ranks");
      total += x.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<size_t>(total));
    std::vector<int> offsets;
    for (const auto& x : xs) {
      offsets.push_back(static_cast<int>(out.size()));
      out.insert(out.end(), x.data().begin(), x.data().end());
    }
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const auto& x : xs) {
      impls.push_back(x.impl());
    }
    return make_node("concat", {total}, std::move(out), xs, [impls, offsets](const TensorImpl& self) {
      for (size_t k = 0; k < impls.size(); ++k) {
        if (!impls[k]->requires_grad) {
          continue;
        }
        for (size_t j = 0; j < impls[k]->data.size(); ++j) {
          impls[k]->grad[j] += self.grad[static_cast<size_t>(offsets[k]) + j];
        }
      }
    });
  }
  // rank 2
  if (axis == 0) {
    const int cols = xs[0].dim(1);
    int rows = 0;
    for (const auto& x : xs) {
      require(x.rank() == 2 && x.dim(1) == cols, "concat: column mismatch");
      rows += x.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<size_t>(rows) * cols);
    std::vector<size_t> offsets;
    for (const auto& x : xs) {
      offsets.push_back(out.size());
      out.insert(out.end(), x.data().begin(), x.data().end());
    }
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const auto& x : xs) {
      impls.push_back(x.impl());
    }
    return make_node("concat", {rows, cols}, std::move(out), xs,
                     [impls, offsets](const TensorImpl& self) {
                       for (size_t k = 0; k < impls.size(); ++k) {
                         if (!impls[k]->requires_grad) {
                           continue;
                         }
                         for (size_t j = 0; j < impls[k]->data.size(); ++j) {
                           impls[k]->grad[j] += self.grad[offsets[k] + j];
                         }
                       }
                     });
  }
  // axis == 1
  const int rows = xs[0].dim(0);
  int cols = 0;
  for (const auto& x : xs) {
    require(x.rank() == 2 && x.dim(0) == rows, "concat: row mismatch");
    cols += x.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(rows) * cols);
  std::vector<int> offsets;
  {
    int off = 0;
    for (const auto& x : xs) {
      offsets.push_back(off);
      for (int i = 0; i < rows; ++i) {
        std::copy_n(x.data().data() + static_cast<size_t>(i) * x.dim(1), x.dim(1),
                    out.data() + static_cast<size_t>(i) * cols + off);
      }
      off += x.dim(1);
    }
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  std::vector<int> widths;
  for (const auto& x : xs) {
    impls.push_back(x.impl());
    widths.push_back(x.dim(1));
  }
  return make_node("concat", {rows, cols}, std::move(out), xs,
                   [impls, offsets, widths, rows, cols](const TensorImpl& self) {
                     for (size_t k = 0; k < impls.size(); ++k) {
                       if (!impls[k]->requires_grad) {
                         continue;
                       }
                       const int w = widths[k];
                       for (int i = 0; i < rows; ++i) {
                         const double* g =
                             self.grad.data() + static_cast<size_t>(i) * cols + offsets[k];
                         double* pg = impls[k]->grad.data() + static_cast<size_t>(i) * w;
                         for (int j = 0; j < w; ++j) {
                           pg[j] += g[j];
                         }
                       }
                     }
                   });
}

Tensor slice(const Tensor& a, int axis, int begin, int end) {
  require(a.rank() >= 1 && a.rank() <= 2, "slice: expected rank 1 or 2");
  require(axis >= 0 && axis < a.rank(), "slice: bad axis " + std::to_string(axis));
  require(begin >= 0 && begin < end && end <= a.dim(axis),
          "slice: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
              ") for axis of size " + std::to_string(a.dim(axis)));
  auto ai = a.impl();
  if (a.rank() == 1) {
    std::vector<double> out(a.data().begin() + begin, a.data().begin() + end);
    return make_node("slice", {end - begin}, std::move(out), {a},
                     [ai, begin](const TensorImpl& self) {
                       for (size_t j = 0; j < self.grad.size(); ++j) {
                         ai->grad[static_cast<size_t>(begin) + j] += self.grad[j];
                       }
                     });
  }
  const int rows = a.dim(0), cols = a.dim(1);
  if (axis == 0) {
    std::vector<double> out(a.data().begin() + static_cast<size_t>(begin) * cols,
                            a.data().begin() + static_cast<size_t>(end) * cols);
    return make_node("slice", {end - begin, cols}, std::move(out), {a},
                     [ai, begin, cols](const TensorImpl& self) {
                       const size_t off = static_cast<size_t>(begin) * cols;
                       for (size_t j = 0; j < self.grad.size(); ++j) {
                         ai->grad[off + j] += self.grad[j];
                       }
                     });
  }
  const int w = end - begin;
  std::vector<double> out(static_cast<size_t>(rows) * w);
  for (int i = 0; i < rows; ++i) {
    std::copy_n(a.data().data() + static_cast<size_t>(i) * cols + begin, w,
                out.data() + static_cast<size_t>(i) * w);
  }
  return make_node("slice", {rows, w}, std::move(out), {a},
                   [ai, begin, cols, rows, w](const TensorImpl& self) {
                     for (int i = 0; i < rows; ++i) {
                       const double* g = self.grad.data() + static_cast<size_t>(i) * w;
                       double* ag = ai->grad.data() + static_cast<size_t>(i) * cols + begin;
                       for (int j = 0; j < w; ++j) {
                         ag[j] += g[j];
                       }
                     }
                   });
}

Tensor detach(const Tensor& a) {
  auto impl = make_leaf(a.shape(), a.data(), false);
  impl->op = "detach";
  return Tensor(impl);
}

Tensor dropout(const Tensor& a, double p, Rng& rng) {
  require(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1), got " + std::to_string(p));
  if (p == 0.0) {
    return a;
  }
  const double keep = 1.0 - p;
  std::vector<double> mask(a.size());
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    out[i] = a.data()[i] * mask[i];
  }
  auto ai = a.impl();
  return make_node("dropout", a.shape(), std::move(out), {a},
                   [ai, mask = std::move(mask)](const TensorImpl& self) {
                     for (size_t i = 0; i < self.grad.size(); ++i) {
                       ai->grad[i] += self.grad[i] * mask[i];
                     }
                   });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) {
    s += x;
  }
  auto ai = a.impl();
  return make_node("sum", {1}, {s}, {a}, [ai](const TensorImpl& self) {
    for (size_t i = 0; i < ai->grad.size(); ++i) {
      ai->grad[i] += self.grad[0];
    }
  });
}

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> inputs, double h) {
  for (auto& x : inputs) {
    x.zero_grad();
  }
  Tensor loss = f(inputs);
  require(loss.size() == 1, "grad_check: f must be scalar-valued");
  backward(loss);
  double max_err = 0.0;
  for (auto& x : inputs) {
    if (!x.requires_grad()) {
      continue;
    }
    for (size_t i = 0; i < x.size(); ++i) {
      const double keep = x.data()[i];
      x.data()[i] = keep + h;
      const double up = f(inputs).value();
      x.data()[i] = keep - h;
      const double down = f(inputs).value();
      x.data()[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = x.grad()[i];
      const double err = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg)
    : cfg_(cfg), params_(std::move(params)) {
  for (const auto& p : params_) {
    require(p.requires_grad(), "AdamW: parameter without gradient (requires_grad is false)");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::step(double lr_scale) {
  ++step_;
  const double lr = cfg_.lr * lr_scale;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    auto& g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    double* w = p.data().data();
    for (size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * cfg_.weight_decay * w[i];
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) {
    p.zero_grad();
  }
}

// ---- checkpoint io ----

namespace {

void put_u64_le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

uint64_t get_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<uint64_t>(p[i]) << (8 * i);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& meta) {
  nlohmann::json header;
  header["format"] = "tensor-ckpt-v1";
  header["meta"] = meta;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& nt : tensors) {
    list.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}});
  }
  header["tensors"] = list;
  const std::string hjson = header.dump();

  std::string out;
  put_u64_le(out, hjson.size());
  out += hjson;
  for (const auto& nt : tensors) {
    for (double x : nt.tensor.data()) {
      uint64_t bits = 0;
      static_assert(sizeof(bits) == sizeof(x));
      std::memcpy(&bits, &x, sizeof(bits));
      put_u64_le(out, bits);
    }
  }
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "save_checkpoint: cannot open " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(f.good(), "save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "load_checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  require(bytes.size() >= 8, "load_checkpoint: truncated file " + path);
  const uint64_t hlen = get_u64_le(reinterpret_cast<const unsigned char*>(bytes.data()));
  require(bytes.size() >= 8 + hlen, "load_checkpoint: truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(bytes.substr(8, hlen));
  require(header.value("format", "") == "tensor-ckpt-v1",
          "load_checkpoint: unknown format in " + path);
  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  size_t off = 8 + hlen;
  for (const auto& entry : header["tensors"]) {
    Shape shape = entry["shape"].get<Shape>();
    const size_t n = numel(shape);
    require(bytes.size() >= off + n * 8, "load_checkpoint: truncated buffer in " + path);
    std::vector<double> data(n);
    for (size_t i = 0; i < n; ++i) {
      const uint64_t bits =
          get_u64_le(reinterpret_cast<const unsigned char*>(bytes.data() + off + i * 8));
      std::memcpy(&data[i], &bits, sizeof(double));
    }
    off += n * 8;
    ck.tensors.push_back({entry["name"].get<std::string>(),
                          Tensor::from(shape, std::move(data), true)});
  }
  return ck;
}

}  // namespace layoutlab
