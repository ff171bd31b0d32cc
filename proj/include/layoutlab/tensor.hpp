#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "layoutlab/rng.hpp"

namespace layoutlab {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

// Dense row-major float64 tensor node. Ops build a define-by-run graph; each
// node keeps the parents and a closure that routes its output gradient to
// them. Only rank-1 and rank-2 tensors are supported.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // same length as data once touched by backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(const TensorImpl&)> backward_fn;
  const char* op = "leaf";

  size_t size() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) {
      grad.assign(data.size(), 0.0);
    }
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  size_t size() const { return impl_->size(); }
  bool requires_grad() const { return impl_->requires_grad; }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  const std::vector<double>& grad() const { return impl_->grad; }

  // scalar convenience
  double value() const;

  double at(int i) const { return impl_->data[static_cast<size_t>(i)]; }
  double at(int i, int j) const {
    return impl_->data[static_cast<size_t>(i) * static_cast<size_t>(impl_->shape[1]) +
                       static_cast<size_t>(j)];
  }

  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }
  Tensor clone() const;  // fresh leaf with copied values

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Topologically ordered record of the operations reachable from a root; the
// reverse sweep replays each node's saved backward closure.
class Tape {
 public:
  static Tape record(const Tensor& root);
  // Propagates gradients assuming the root gradient was seeded by the caller.
  void replay_backward() const;
  // Interior (non-leaf) gradients are scratch space for a single sweep; only
  // leaf gradients accumulate across backward calls.
  void zero_interior_grads() const;
  size_t node_count() const { return order_.size(); }

 private:
  std::vector<std::shared_ptr<TensorImpl>> order_;
};

// Seeds d(loss)/d(loss) = 1 and populates grads of every requires_grad node
// reachable from `loss`. Gradients accumulate across calls.
void backward(const Tensor& loss);

// ---- primitive forward ops ----

// add/mul: equal shapes elementwise, or [N,d] op [d] broadcast over rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_n(const std::vector<Tensor>& xs);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor relu(const Tensor& a);
// tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))
Tensor gelu(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);
// Pre-affine normalization along the last axis: (x - mean) / sqrt(var + eps).
Tensor layer_norm(const Tensor& a, int axis, double eps);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor gather_rows(const Tensor& a, const std::vector<int>& rows);
Tensor mean_pool(const Tensor& a, const std::vector<int>& rows);
Tensor cross_entropy(const Tensor& logits, int target);
// Mean negative log-likelihood over rows of [J,V] logits.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);
Tensor cosine_sim(const Tensor& u, const Tensor& v);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& a, int axis, int begin, int end);
// Value-equal tensor that blocks gradient flow.
Tensor detach(const Tensor& a);
Tensor dropout(const Tensor& a, double p, Rng& rng);
Tensor sum(const Tensor& a);

// Max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
// with central differences of step h, for scalar-valued f.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> inputs, double h = 1e-5);

// ---- AdamW ----

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled weight decay: decay is applied to the weights directly, the moment
// estimates see only the raw gradient.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg);
  // lr_scale multiplies cfg.lr for this step (linear decay hooks in here).
  void step(double lr_scale = 1.0);
  void zero_grad();
  long step_count() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long step_ = 0;
};

// ---- checkpoint io ----
// Layout: u64 little-endian header length, JSON header bytes, then one raw
// little-endian float64 buffer per tensor in header order.

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& meta);

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  nlohmann::json meta;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace layoutlab
