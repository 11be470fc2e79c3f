// Dense float64 tensors with a define-by-run tape for reverse-mode gradients.
//
// Conventions:
//  - row-major storage, shapes are 1-D or 2-D throughout this project
//  - every primitive validates shapes and rejects non-finite outputs
//  - passing tape == nullptr runs the primitive in inference mode (no record)
#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "zsnmt/common.hpp"

namespace zsnmt {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  bool requires_grad = false;
  int64_t id = -1;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);

  int64_t numel() const;
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? (shape.empty() ? 1 : shape[0]) : shape[1]; }
  bool is_scalar() const { return numel() == 1; }
  double value() const;  // scalar accessor

  double* ptr() { return data->data(); }
  const double* ptr() const { return data->data(); }
  double& at(int i) { return (*data)[static_cast<size_t>(i)]; }
  double at(int i) const { return (*data)[static_cast<size_t>(i)]; }
  double& at(int r, int c) { return (*data)[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return (*data)[static_cast<size_t>(r) * cols() + c]; }

  // Same storage, fresh identity, no gradient: a stop-gradient view.
  Tensor detached() const;

  static int64_t fresh_id();
};

using GradMap = std::unordered_map<int64_t, Tensor>;

// Ordered record of executed primitives. One forward pass builds one tape;
// backward() consumes it exactly once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  void record(const char* kind, BackwardFn fn);
  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Accumulation slot for a tensor's gradient (created zeroed on demand).
  Tensor& grad_slot(const Tensor& t);
  // Gradient of the output being differentiated through, if any reached it.
  const Tensor* find_grad(int64_t id) const;

  GradMap backward(const Tensor& loss);

 private:
  struct Node {
    const char* kind;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  GradMap grads_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Forward primitives
// ---------------------------------------------------------------------------

// [M,K] x [K,N] -> [M,N]
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
// same-shape elementwise, or b broadcast over rows of a when b is [N] and a is [M,N]
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double c);
// softmax over the last dimension, rows of a 2-D input or the whole 1-D input
Tensor softmax(Tape* tape, const Tensor& a);
// normalize last dim to zero mean / unit variance (eps-floored), then gain*x+bias
Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-6);
Tensor leaky_relu(Tape* tape, const Tensor& x, double alpha);
// table [V,D], ids -> [len(ids), D]
Tensor embedding_lookup(Tape* tape, const Tensor& table, std::span<const int> ids);
// [T,D] -> [D], elementwise max over the first valid_rows rows
Tensor max_pool_time(Tape* tape, const Tensor& x, int valid_rows);
// two equal-length vectors -> scalar in [-1,1]; zero-norm input is an error
Tensor cosine_similarity(Tape* tape, const Tensor& u, const Tensor& v);
// inverted dropout: keep with prob 1-rate and scale by 1/(1-rate); rate 0 is identity
Tensor dropout(Tape* tape, const Tensor& x, double rate, Rng& rng);
// axis 0: stack rows; axis 1: stack columns (2-D inputs; 1-D treated as one row)
Tensor concat(Tape* tape, const std::vector<Tensor>& parts, int axis);
Tensor transpose(Tape* tape, const Tensor& a);
Tensor slice_cols(Tape* tape, const Tensor& a, int c0, int c1);
Tensor sigmoid(Tape* tape, const Tensor& x);
// mean over elements of -log(sigmoid(x)) when positive_class, else -log(1-sigmoid(x));
// computed in the numerically stable softplus form
Tensor logistic_nll(Tape* tape, const Tensor& logits, bool positive_class);

// Mean negative log-likelihood over positions whose mask entry is nonzero
// (empty mask means all positions count). logits [P,V], targets length P.
Tensor cross_entropy_loss(Tape* tape, const Tensor& logits, std::span<const int> targets,
                          std::span<const uint8_t> include_mask = {});

GradMap backward(Tape& tape, const Tensor& loss);

}  // namespace zsnmt
