#include "zsnmt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace zsnmt {

namespace {

std::atomic<int64_t> g_next_id{1};

void check_finite(const Tensor& t, const char* op) {
  for (double v : *t.data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": produced non-finite value");
    }
  }
}

bool want_grad(Tape* tape, const Tensor& t) { return tape != nullptr && t.requires_grad; }

void accumulate(Tensor& slot, const double* src, int64_t n) {
  double* dst = slot.ptr();
  for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

// dst[M,N] += a[M,K] * b[K,N]
void matmul_acc(const double* a, const double* b, double* dst, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* drow = dst + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) drow[j] += av * brow[j];
    }
  }
}

// dst[M,N] += a[K,M]^T * b[K,N]
void matmul_at_acc(const double* a, const double* b, double* dst, int k, int m, int n) {
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<size_t>(p) * m;
    const double* brow = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* drow = dst + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) drow[j] += av * brow[j];
    }
  }
}

// dst[M,K] += a[M,N] * b[K,N]^T
void matmul_bt_acc(const double* a, const double* b, double* dst, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * n;
    double* drow = dst + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* brow = b + static_cast<size_t>(p) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
      drow[p] += acc;
    }
  }
}

void require_2d(const Tensor& t, const char* op) {
  if (t.shape.size() != 2) {
    throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape));
  }
}

void require_vector(const Tensor& t, const char* op) {
  if (t.shape.size() != 1) {
    throw ShapeError(std::string(op) + ": expected 1-D tensor, got " + shape_str(t.shape));
  }
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

int64_t Tensor::fresh_id() { return g_next_id.fetch_add(1, std::memory_order_relaxed); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  t.shape = std::move(shape);
  int64_t n = 1;
  for (int e : t.shape) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(t.shape));
    n *= e;
  }
  t.data = std::make_shared<std::vector<double>>(static_cast<size_t>(n), 0.0);
  t.requires_grad = requires_grad;
  t.id = fresh_id();
  return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  Tensor t;
  t.shape = std::move(shape);
  int64_t n = 1;
  for (int e : t.shape) n *= e;
  if (n != static_cast<int64_t>(values.size())) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(t.shape));
  }
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  t.requires_grad = requires_grad;
  t.id = fresh_id();
  return t;
}

int64_t Tensor::numel() const {
  int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

double Tensor::value() const {
  if (!is_scalar()) throw ShapeError("value(): tensor is not scalar, shape " + shape_str(shape));
  return (*data)[0];
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape = shape;
  t.data = data;
  t.requires_grad = false;
  t.id = fresh_id();
  return t;
}

void Tape::record(const char* kind, BackwardFn fn) {
  nodes_.push_back(Node{kind, std::move(fn)});
}

Tensor& Tape::grad_slot(const Tensor& t) {
  auto it = grads_.find(t.id);
  if (it == grads_.end()) {
    it = grads_.emplace(t.id, Tensor::zeros(t.shape)).first;
  }
  return it->second;
}

const Tensor* Tape::find_grad(int64_t id) const {
  auto it = grads_.find(id);
  return it == grads_.end() ? nullptr : &it->second;
}

GradMap Tape::backward(const Tensor& loss) {
  if (consumed_) throw Error("backward: tape already consumed");
  if (!loss.is_scalar()) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape));
  }
  if (nodes_.empty()) throw Error("backward: tape is empty");
  consumed_ = true;
  grads_.emplace(loss.id, Tensor::full(loss.shape, 1.0));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->fn(*this);
  }
  return std::move(grads_);
}

GradMap backward(Tape& tape, const Tensor& loss) { return tape.backward(loss); }

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.shape[1] != b.shape[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape) + " x " +
                     shape_str(b.shape));
  }
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out = Tensor::zeros({m, n});
  matmul_acc(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  check_finite(out, "matmul");
  const bool ga = want_grad(tape, a), gb = want_grad(tape, b);
  if (ga || gb) {
    out.requires_grad = true;
    tape->record("matmul", [a, b, out, ga, gb, m, k, n](Tape& t) {
      const Tensor* g = t.find_grad(out.id);
      if (!g) return;
      if (ga) matmul_bt_acc(g->ptr(), b.ptr(), t.grad_slot(a).ptr(), m, n, k);
      if (gb) matmul_at_acc(a.ptr(), g->ptr(), t.grad_slot(b).ptr(), k, m, n);
    });
  }
  return out;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  const bool row_broadcast =
      a.shape.size() == 2 && b.shape.size() == 1 && b.shape[0] == a.shape[1];
  if (!row_broadcast && a.shape != b.shape) {
    throw ShapeError("add: incompatible shapes " + shape_str(a.shape) + " + " +
                     shape_str(b.shape));
  }
  Tensor out = Tensor::zeros(a.shape);
  const int64_t n = a.numel();
  const double* pa = a.ptr();
  double* po = out.ptr();
  if (row_broadcast) {
    const int rows = a.shape[0], cols = a.shape[1];
    const double* pb = b.ptr();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        po[static_cast<size_t>(r) * cols + c] = pa[static_cast<size_t>(r) * cols + c] + pb[c];
  } else {
    const double* pb = b.ptr();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  }
  check_finite(out, "add");
  const bool ga = want_grad(tape, a), gb = want_grad(tape, b);
  if (ga || gb) {
    out.requires_grad = true;
    tape->record("add", [a, b, out, ga, gb, row_broadcast, n](Tape& t) {
      const Tensor* g = t.find_grad(out.id);
      if (!g) return;
      if (ga) accumulate(t.grad_slot(a), g->ptr(), n);
      if (gb) {
        Tensor& sb = t.grad_slot(b);
        if (row_broadcast) {
          const int rows = a.shape[0], cols = a.shape[1];
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) sb.at(c) += g->at(r, c);
        } else {
          accumulate(sb, g->ptr(), n);
        }
      }
    });
  }
  return out;
}

Tensor scale(Tape* tape, const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape);
  const int64_t n = a.numel();
  const double* pa = a.ptr();
  double* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  check_finite(out, "scale");
  if (want_grad(tape, a)) {
    out.requires_grad = true;
    tape->record("scale", [a, out, c, n](Tape& t) {
      const Tensor* g = t.find_grad(out.id);
      if (!g) return;
      Tensor& sa = t.grad_slot(a);
      const double* pg = g->ptr();
      double* ps = sa.ptr();
      for (int64_t i = 0; i < n; ++i) ps[i] += c * pg[i];
    });
  }
  return out;
}

Tensor softmax(Tape* tape, const Tensor& a) {
  if (a.shape.empty() || a.shape.size() > 2) {
    throw ShapeError("softmax: expected 1-D or 2-D tensor, got " + shape_str(a.shape));
  }
  const int rows = a.shape.size() == 2 ? a.shape[0] : 1;
  const int cols = a.shape.size() == 2 ? a.shape[1] : a.shape[0];
  Tensor out = Tensor::zeros(a.shape);
  for (int r = 0; r < rows; ++r) {
    const double* in = a.ptr() + static_cast<size_t>(r) * cols;
    double* o = out.ptr() + static_cast<size_t>(r) * cols;
    double mx = in[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    double sum = 0.0;
    for (int c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (int c = 0; c < cols; ++c) o[c] /= sum;
  }
  check_finite(out, "softmax");
  if (want_grad(tape, a)) {
    out.requires_grad = true;
    tape->record("softmax", [a, out, rows, cols](Tape& t) {
      const Tensor* g = t.find_grad(out.id);
      if (!g) return;
      Tensor& sa = t.grad_slot(a);
      for (int r = 0; r < rows; ++r) {
        const double* y = out.ptr() + static_cast<size_t>(r) * cols;
        const double* gy = g->ptr() + static_cast<size_t>(r) * cols;
        double* gx = sa.ptr() + static_cast<size_t>(r) * cols;
        double dot = 0.0;
        for (int c = 0; c < cols; ++c) dot += y[c] * gy[c];
        for (int c = 0; c < cols; ++c) gx[c] += y[c] * (gy[c] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.shape.empty() || x.shape.size() > 2) {
    throw ShapeError("layer_norm: expected 1-D or 2-D input, got " + shape_str(x.shape));
  }
  require_vector(gain, "layer_norm");
  require_vector(bias, "layer_norm");
  const int rows = x.shape.size() == 2 ? x.shape[0] : 1;
  const int cols = x.shape.size() == 2 ? x.shape[1] : x.shape[0];
  if (gain.shape[0] != cols || bias.shape[0] != cols) {
    throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape) + "/" +
                     shape_str(bias.shape) + " do not match feature dim " + std::to_string(cols));
  }
  Tensor out = Tensor::zeros(x.shape);
  Tensor xhat = Tensor::zeros(x.shape);
  std::vector<double> inv_std(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const double* in = x.ptr() + static_cast<size_t>(r) * cols;
    double mean = 0.0;
    for (int c = 0; c < cols; ++c) mean += in[c];
    mean /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double d = in[c] - mean;
      var += d * d;
    }
    var /= cols;
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = istd;
    double* xh = xhat.ptr() + static_cast<size_t>(r) * cols;
    double* o = out.ptr() + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) {
      xh[c] = (in[c] - mean) * istd;
      o[c] = gain.at(c) * xh[c] + bias.at(c);
    }
  }
  check_finite(out, "layer_norm");
  const bool gx = want_grad(tape, x), gg = want_grad(tape, gain), gb = want_grad(tape, bias);
  if (gx || gg || gb) {
    out.requires_grad = true;
    tape->record("layer_norm",
                 [x, gain, bias, out, xhat, inv_std, rows, cols, gx, gg, gb](Tape& t) {
                   const Tensor* g = t.find_grad(out.id);
                   if (!g) return;
                   for (int r = 0; r < rows; ++r) {
                     const double* gy = g->ptr() + static_cast<size_t>(r) * cols;
                     const double* xh = xhat.ptr() + static_cast<size_t>(r) * cols;
                     if (gg) {
                       Tensor& sg = t.grad_slot(gain);
                       for (int c = 0; c < cols; ++c) sg.at(c) += gy[c] * xh[c];
                     }
                     if (gb) {
                       Tensor& sb = t.grad_slot(bias);
                       for (int c = 0; c < cols; ++c) sb.at(c) += gy[c];
                     }
                     if (gx) {
                       Tensor& sx = t.grad_slot(x);
                       double* gxp = sx.ptr() + static_cast<size_t>(r) * cols;
                       double mean_h = 0.0, mean_hx = 0.0;
                       for (int c = 0; c < cols; ++c) {
                         const double h = gain.at(c) * gy[c];
                         mean_h += h;
                         mean_hx += h * xh[c];
                       }
                       mean_h /= cols;
                       mean_hx /= cols;
                       const double istd = inv_std[static_cast<size_t>(r)];
                       for (int c = 0; c < cols; ++c) {
                         const double h = gain.at(c) * gy[c];
                         gxp[c] += (h - mean_h - xh[c] * mean_hx) * istd;
                       }
                     }
                   }
                 });
  }
  return out;
}

Tensor leaky_relu(Tape* tape, const Tensor& x, double alpha) {
  Tensor out = Tensor::zeros(x.shape);
  const int64_t n = x.numel();
  const double* px = x.ptr();
  double* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] > 0.0 ? px[i] : alpha * px[i];
  check_finite(out, "leaky_relu");
  if (want_grad(tape, x)) {
    out.requires_grad = true;
    tape->record("leaky_relu", [x, out, alpha, n](Tape& t) {
      const Tensor* g = t.find_grad(out.id);
      if (!g) return;
      Tensor& sx = t.grad_slot(x);
      const double* pg = g->ptr();
      const double* px2 = x.ptr();
      double* ps = sx.ptr();
      for (int64_t i = 0; i < n; ++i) ps[i] += pg[i] * (px2[i] > 0.0 ? 1.0 : alpha);
    });
  }
  return out;
}

Tensor embedding_lookup(Tape* tape, const Tensor& table, std::span<const int> ids) {
  require_2d(table, "embedding_lookup");
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id list");
  const int v = table.shape[0], d = table.shape[1];
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw ShapeError("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                       std::to_string(v) + " rows");
    }
  }
  const int t_len = static_cast<int>(ids.size());
  Tensor out = Tensor::zeros({t_len, d});
  for (int i = 0; i < t_len; ++i) {
    std::memcpy(out.ptr() + static_cast<size_t>(i) * d,
                table.ptr() + static_cast<size_t>(ids[i]) * d, sizeof(double) * d);
  }
  check_finite(out, "embedding_lookup");
  if (want_grad(tape, table)) {
    out.requires_grad = true;
    std::vector<int> saved_ids(ids.begin(), ids.end());
    tape->record("embedding_lookup", [table, out, saved_ids, d](Tape& t) {
      const Tensor* g = t.find_grad(out.id);
      if (!g) return;
      Tensor& st = t.grad_slot(table);
      for (size_t i = 0; i < saved_ids.size(); ++i) {
        double* row = st.ptr() + static_cast<size_t>(saved_ids[i]) * d;
        const double* gr = g->ptr() + i * d;
        for (int c = 0; c < d; ++c) row[c] += gr[c];
      }
    });
  }
  return out;
}

Tensor max_pool_time(Tape* tape, const Tensor& x, int valid_rows) {
  require_2d(x, "max_pool_time");
  if (valid_rows < 1 || valid_rows > x.shape[0]) {
    throw ShapeError("max_pool_time: valid_rows " + std::to_string(valid_rows) +
                     " out of range for " + shape_str(x.shape));
  }
  const int d = x.shape[1];
  Tensor out = Tensor::zeros({d});
  std::vector<int> argmax(static_cast<size_t>(d), 0);
  for (int c = 0; c < d; ++c) {
    double best = x.at(0, c);
    int bi = 0;
    for (int r = 1; r < valid_rows; ++r) {
      if (x.at(r, c) > best) {
        best = x.at(r, c);
        bi = r;
      }
    }
    out.at(c) = best;
    argmax[static_cast<size_t>(c)] = bi;
  }
  check_finite(out, "max_pool_time");
  if (want_grad(tape, x)) {
    out.requires_grad = true;
    tape->record("max_pool_time", [x, out, argmax, d](Tape& t) {
      const Tensor* g = t.find_grad(out.id);
      if (!g) return;
      Tensor& sx = t.grad_slot(x);
      for (int c = 0; c < d; ++c) sx.at(argmax[static_cast<size_t>(c)], c) += g->at(c);
    });
  }
  return out;
}

Tensor cosine_similarity(Tape* tape, const Tensor& u, const Tensor& v) {
  require_vector(u, "cosine_similarity");
  require_vector(v, "cosine_similarity");
  if (u.shape != v.shape) {
    throw ShapeError("cosine_similarity: length mismatch " + shape_str(u.shape) + " vs " +
                     shape_str(v.shape));
  }
  const int n = u.shape[0];
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (int i = 0; i < n; ++i) {
    dot += u.at(i) * v.at(i);
    nu += u.at(i) * u.at(i);
    nv += v.at(i) * v.at(i);
  }
  if (nu == 0.0 || nv == 0.0) {
    throw NumericError("cosine_similarity: zero-norm input vector");
  }
  const double inu = 1.0 / std::sqrt(nu), inv = 1.0 / std::sqrt(nv);
  const double cosv = dot * inu * inv;
  Tensor out = Tensor::scalar(cosv);
  check_finite(out, "cosine_similarity");
  const bool gu = want_grad(tape, u), gv = want_grad(tape, v);
  if (gu || gv) {
    out.requires_grad = true;
    tape->record("cosine_similarity", [u, v, out, cosv, inu, inv, n, gu, gv](Tape& t) {
      const Tensor* g = t.find_grad(out.id);
      if (!g) return;
      const double gs = g->value();
      if (gu) {
        Tensor& su = t.grad_slot(u);
        for (int i = 0; i < n; ++i) {
          su.at(i) += gs * (v.at(i) * inu * inv - cosv * u.at(i) * inu * inu);
        }
      }
      if (gv) {
        Tensor& sv = t.grad_slot(v);
        for (int i = 0; i < n; ++i) {
          sv.at(i) += gs * (u.at(i) * inu * inv - cosv * v.at(i) * inv * inv);
        }
      }
    });
  }
  return out;
}

Tensor dropout(Tape* tape, const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw NumericError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  }
  if (rate == 0.0) return x;
  const double keep = 1.0 - rate;
  const double inv_keep = 1.0 / keep;
  const int64_t n = x.numel();
  auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    (*mask)[static_cast<size_t>(i)] = rng.uniform() < keep ? inv_keep : 0.0;
  }
  Tensor out = Tensor::zeros(x.shape);
  const double* px = x.ptr();
  double* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] * (*mask)[static_cast<size_t>(i)];
  check_finite(out, "dropout");
  if (want_grad(tape, x)) {
    out.requires_grad = true;
    tape->record("dropout", [x, out, mask, n](Tape& t) {
      const Tensor* g = t.find_grad(out.id);
      if (!g) return;
      Tensor& sx = t.grad_slot(x);
      const double* pg = g->ptr();
      double* ps = sx.ptr();
      for (int64_t i = 0; i < n; ++i) ps[i] += pg[i] * (*mask)[static_cast<size_t>(i)];
    });
  }
  return out;
}

Tensor concat(Tape* tape, const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  // Normalize: treat 1-D inputs as single rows.
  std::vector<int> rows(parts.size()), cols(parts.size());
  for (size_t i = 0; i < parts.size(); ++i) {
    const Shape& s = parts[i].shape;
    if (s.size() == 1) {
      rows[i] = 1;
      cols[i] = s[0];
    } else if (s.size() == 2) {
      rows[i] = s[0];
      cols[i] = s[1];
    } else {
      throw ShapeError("concat: expected 1-D or 2-D parts, got " + shape_str(s));
    }
  }
  int out_rows = rows[0], out_cols = cols[0];
  for (size_t i = 1; i < parts.size(); ++i) {
    if (axis == 0) {
      if (cols[i] != out_cols)
        throw ShapeError("concat axis 0: column mismatch " + shape_str(parts[i].shape));
      out_rows += rows[i];
    } else {
      if (rows[i] != out_rows)
        throw ShapeError("concat axis 1: row mismatch " + shape_str(parts[i].shape));
      out_cols += cols[i];
    }
  }
  if (axis == 1) out_rows = rows[0];
  Tensor out = Tensor::zeros({axis == 0 ? out_rows : rows[0], out_cols});
  if (axis == 0) {
    int r0 = 0;
    for (size_t i = 0; i < parts.size(); ++i) {
      std::memcpy(out.ptr() + static_cast<size_t>(r0) * out_cols, parts[i].ptr(),
                  sizeof(double) * parts[i].numel());
      r0 += rows[i];
    }
  } else {
    int c0 = 0;
    for (size_t i = 0; i < parts.size(); ++i) {
      for (int r = 0; r < out_rows; ++r) {
        std::memcpy(out.ptr() + static_cast<size_t>(r) * out_cols + c0,
                    parts[i].ptr() + static_cast<size_t>(r) * cols[i], sizeof(double) * cols[i]);
      }
      c0 += cols[i];
    }
  }
  check_finite(out, "concat");
  bool any_grad = false;
  for (const Tensor& p : parts) any_grad = any_grad || want_grad(tape, p);
  if (any_grad) {
    out.requires_grad = true;
    tape->record("concat", [parts, out, rows, cols, axis, out_cols](Tape& t) {
      const Tensor* g = t.find_grad(out.id);
      if (!g) return;
      int r0 = 0, c0 = 0;
      for (size_t i = 0; i < parts.size(); ++i) {
        if (parts[i].requires_grad) {
          Tensor& sp = t.grad_slot(parts[i]);
          if (axis == 0) {
            accumulate(sp, g->ptr() + static_cast<size_t>(r0) * out_cols, parts[i].numel());
          } else {
            for (int r = 0; r < rows[i]; ++r) {
              const double* gr = g->ptr() + static_cast<size_t>(r) * out_cols + c0;
              double* pr = sp.ptr() + static_cast<size_t>(r) * cols[i];
              for (int c = 0; c < cols[i]; ++c) pr[c] += gr[c];
            }
          }
        }
        r0 += rows[i];
        c0 += cols[i];
      }
    });
  }
  return out;
}

Tensor transpose(Tape* tape, const Tensor& a) {
  require_2d(a, "transpose");
  const int m = a.shape[0], n = a.shape[1];
  Tensor out = Tensor::zeros({n, m});
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out.at(c, r) = a.at(r, c);
  if (want_grad(tape, a)) {
    out.requires_grad = true;
    tape->record("transpose", [a, out, m, n](Tape& t) {
      const Tensor* g = t.find_grad(out.id);
      if (!g) return;
      Tensor& sa = t.grad_slot(a);
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) sa.at(r, c) += g->at(c, r);
    });
  }
  return out;
}

Tensor slice_cols(Tape* tape, const Tensor& a, int c0, int c1) {
  require_2d(a, "slice_cols");
  if (c0 < 0 || c1 <= c0 || c1 > a.shape[1]) {
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") invalid for " + shape_str(a.shape));
  }
  const int m = a.shape[0], w = c1 - c0, n = a.shape[1];
  Tensor out = Tensor::zeros({m, w});
  for (int r = 0; r < m; ++r) {
    std::memcpy(out.ptr() + static_cast<size_t>(r) * w, a.ptr() + static_cast<size_t>(r) * n + c0,
                sizeof(double) * w);
  }
  if (want_grad(tape, a)) {
    out.requires_grad = true;
    tape->record("slice_cols", [a, out, c0, m, w, n](Tape& t) {
      const Tensor* g = t.find_grad(out.id);
      if (!g) return;
      Tensor& sa = t.grad_slot(a);
      for (int r = 0; r < m; ++r) {
        const double* gr = g->ptr() + static_cast<size_t>(r) * w;
        double* pr = sa.ptr() + static_cast<size_t>(r) * n + c0;
        for (int c = 0; c < w; ++c) pr[c] += gr[c];
      }
    });
  }
  return out;
}

Tensor sigmoid(Tape* tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape);
  const int64_t n = x.numel();
  const double* px = x.ptr();
  double* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) {
    const double v = px[i];
    po[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  check_finite(out, "sigmoid");
  if (want_grad(tape, x)) {
    out.requires_grad = true;
    tape->record("sigmoid", [x, out, n](Tape& t) {
      const Tensor* g = t.find_grad(out.id);
      if (!g) return;
      Tensor& sx = t.grad_slot(x);
      const double* pg = g->ptr();
      const double* py = out.ptr();
      double* ps = sx.ptr();
      for (int64_t i = 0; i < n; ++i) ps[i] += pg[i] * py[i] * (1.0 - py[i]);
    });
  }
  return out;
}

Tensor logistic_nll(Tape* tape, const Tensor& logits, bool positive_class) {
  const int64_t n = logits.numel();
  if (n == 0) throw ShapeError("logistic_nll: empty input");
  auto softplus = [](double z) {
    return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  };
  double total = 0.0;
  const double* px = logits.ptr();
  for (int64_t i = 0; i < n; ++i) {
    // -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x)
    total += positive_class ? softplus(-px[i]) : softplus(px[i]);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  check_finite(out, "logistic_nll");
  if (want_grad(tape, logits)) {
    out.requires_grad = true;
    tape->record("logistic_nll", [logits, out, positive_class, n](Tape& t) {
      const Tensor* g = t.find_grad(out.id);
      if (!g) return;
      const double gs = g->value() / static_cast<double>(n);
      Tensor& sx = t.grad_slot(logits);
      const double* px2 = logits.ptr();
      double* ps = sx.ptr();
      const double y = positive_class ? 1.0 : 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double v = px2[i];
        const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        ps[i] += gs * (s - y);
      }
    });
  }
  return out;
}

Tensor cross_entropy_loss(Tape* tape, const Tensor& logits, std::span<const int> targets,
                          std::span<const uint8_t> include_mask) {
  require_2d(logits, "cross_entropy_loss");
  const int p = logits.shape[0], v = logits.shape[1];
  if (static_cast<int>(targets.size()) != p) {
    throw ShapeError("cross_entropy_loss: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(p) + " logit rows");
  }
  if (!include_mask.empty() && static_cast<int>(include_mask.size()) != p) {
    throw ShapeError("cross_entropy_loss: mask length mismatch");
  }
  auto included = [&](int i) { return include_mask.empty() || include_mask[i] != 0; };
  int n_active = 0;
  for (int i = 0; i < p; ++i) {
    if (!included(i)) continue;
    ++n_active;
    if (targets[i] < 0 || targets[i] >= v) {
      throw ShapeError("cross_entropy_loss: target id " + std::to_string(targets[i]) +
                       " outside vocab of " + std::to_string(v));
    }
  }
  if (n_active == 0) throw Error("cross_entropy_loss: all positions padded");

  Tensor probs = Tensor::zeros({p, v});
  double total = 0.0;
  for (int i = 0; i < p; ++i) {
    const double* row = logits.ptr() + static_cast<size_t>(i) * v;
    double* pr = probs.ptr() + static_cast<size_t>(i) * v;
    double mx = row[0];
    for (int c = 1; c < v; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (int c = 0; c < v; ++c) {
      pr[c] = std::exp(row[c] - mx);
      sum += pr[c];
    }
    for (int c = 0; c < v; ++c) pr[c] /= sum;
    if (included(i)) {
      total += (mx + std::log(sum)) - row[targets[i]];
    }
  }
  Tensor out = Tensor::scalar(total / n_active);
  check_finite(out, "cross_entropy_loss");
  if (want_grad(tape, logits)) {
    out.requires_grad = true;
    std::vector<int> tg(targets.begin(), targets.end());
    std::vector<uint8_t> mk(include_mask.begin(), include_mask.end());
    tape->record("cross_entropy_loss", [logits, out, probs, tg, mk, p, v, n_active](Tape& t) {
      const Tensor* g = t.find_grad(out.id);
      if (!g) return;
      const double gs = g->value() / n_active;
      Tensor& sl = t.grad_slot(logits);
      for (int i = 0; i < p; ++i) {
        if (!mk.empty() && mk[static_cast<size_t>(i)] == 0) continue;
        const double* pr = probs.ptr() + static_cast<size_t>(i) * v;
        double* gr = sl.ptr() + static_cast<size_t>(i) * v;
        for (int c = 0; c < v; ++c) gr[c] += gs * pr[c];
        gr[tg[static_cast<size_t>(i)]] -= gs;
      }
    });
  }
  return out;
}

}  // namespace zsnmt
