#include "densemp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace densemp::ad {
namespace {

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank)
    throw ArgumentError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(t.shape));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape)
    throw ArgumentError(std::string(op) + ": shape mismatch " + shape_string(a.shape) + " vs " + shape_string(b.shape));
}

// Adaptive pooling cell [start, end) along an axis of length n split into S cells.
std::pair<int, int> pool_cell(int i, int n, int S) {
  const int start = (i * n) / S;
  const int end = ((i + 1) * n + S - 1) / S;
  return {start, end};
}

}  // namespace

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != shape_size(shape)) throw ArgumentError("tensor data does not match shape " + shape_string(shape));
}

double Tensor::item() const {
  if (data.size() != 1) throw ArgumentError("item() on non-scalar tensor " + shape_string(shape));
  return data[0];
}

std::vector<double> Tensor::column(int c) const {
  std::vector<double> out(rows());
  for (int r = 0; r < rows(); ++r) out[r] = at(r, c);
  return out;
}

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ArgumentError("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << '}';
  return os.str();
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, std::function<void(Tape&, int)> backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, std::function<void(Tape&, int)> backward) {
  bool needs = false;
  for (const auto& v : inputs) {
    if (v.tape() != this) throw ArgumentError("op inputs belong to a different tape");
    needs |= nodes_[v.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Tensor& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape, 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor& Tape::grad(int id) { return grad_buffer(id); }

void Tape::backward(Var out) {
  if (out.tape() != this) throw ArgumentError("backward: variable from another tape");
  if (value(out.id()).size() != 1) throw ArgumentError("backward needs a scalar output");
  if (!nodes_[out.id()].requires_grad) return;
  grad_buffer(out.id()).data[0] += 1.0;
  for (int id = out.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.has_grad && n.backward) n.backward(*this, id);
  }
}

// ---------------------------------------------------------------------------------------------

Var conv2d(Var x, Var w, Var b) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  require_rank(X, 3, "conv2d");
  require_rank(W, 4, "conv2d");
  const int ci = X.dim(0), H = X.dim(1), Wd = X.dim(2);
  const int co = W.dim(0), k = W.dim(2);
  if (W.dim(1) != ci || W.dim(3) != k || k % 2 == 0) throw ArgumentError("conv2d: bad kernel shape " + shape_string(W.shape));
  if (b.value().shape != std::vector<int>{co}) throw ArgumentError("conv2d: bias shape mismatch");
  const int pad = k / 2;
  const std::size_t plane = static_cast<std::size_t>(H) * Wd;

  Tensor out({co, H, Wd});
  for (int o = 0; o < co; ++o) {
    double* op = out.data.data() + o * plane;
    std::fill(op, op + plane, b.value().data[o]);
    for (int i = 0; i < ci; ++i) {
      const double* xp = X.data.data() + i * plane;
      for (int ky = 0; ky < k; ++ky) {
        const int dy = ky - pad;
        const int r0 = std::max(0, -dy), r1 = std::min(H, H - dy);
        for (int kx = 0; kx < k; ++kx) {
          const int dx = kx - pad;
          const int c0 = std::max(0, -dx), c1 = std::min(Wd, Wd - dx);
          const double wv = W.data[((static_cast<std::size_t>(o) * ci + i) * k + ky) * k + kx];
          for (int r = r0; r < r1; ++r) {
            double* orow = op + static_cast<std::size_t>(r) * Wd;
            const double* xrow = xp + static_cast<std::size_t>(r + dy) * Wd + dx;
            for (int c = c0; c < c1; ++c) orow[c] += wv * xrow[c];
          }
        }
      }
    }
  }

  const int xid = x.id(), wid = w.id(), bid = b.id();
  return x.tape()->record(std::move(out), {x, w, b}, [=](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    const Tensor& Xv = t.value(xid);
    const Tensor& Wv = t.value(wid);
    const bool gx_on = t.requires_grad(xid), gw_on = t.requires_grad(wid), gb_on = t.requires_grad(bid);
    Tensor* GX = gx_on ? &t.grad_buffer(xid) : nullptr;
    Tensor* GW = gw_on ? &t.grad_buffer(wid) : nullptr;
    Tensor* GB = gb_on ? &t.grad_buffer(bid) : nullptr;
    for (int o = 0; o < co; ++o) {
      const double* gp = G.data.data() + o * plane;
      if (GB) GB->data[o] += std::accumulate(gp, gp + plane, 0.0);
      for (int i = 0; i < ci; ++i) {
        const double* xp = Xv.data.data() + i * plane;
        double* gxp = GX ? GX->data.data() + i * plane : nullptr;
        for (int ky = 0; ky < k; ++ky) {
          const int dy = ky - pad;
          const int r0 = std::max(0, -dy), r1 = std::min(H, H - dy);
          for (int kx = 0; kx < k; ++kx) {
            const int dx = kx - pad;
            const int c0 = std::max(0, -dx), c1 = std::min(Wd, Wd - dx);
            const std::size_t widx = ((static_cast<std::size_t>(o) * ci + i) * k + ky) * k + kx;
            const double wv = Wv.data[widx];
            double gw = 0.0;
            for (int r = r0; r < r1; ++r) {
              const double* grow = gp + static_cast<std::size_t>(r) * Wd;
              const std::size_t xoff = static_cast<std::size_t>(r + dy) * Wd + dx;
              if (gxp) {
                double* gxrow = gxp + xoff;
                for (int c = c0; c < c1; ++c) gxrow[c] += wv * grow[c];
              }
              if (GW) {
                const double* xrow = xp + xoff;
                for (int c = c0; c < c1; ++c) gw += grow[c] * xrow[c];
              }
            }
            if (GW) GW->data[widx] += gw;
          }
        }
      }
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = x.value();
  require_rank(X, 3, "layer_norm");
  const int C = X.dim(0);
  const std::size_t n = static_cast<std::size_t>(X.dim(1)) * X.dim(2);
  const std::size_t N = X.size();
  if (gamma.value().shape != std::vector<int>{C} || beta.value().shape != std::vector<int>{C})
    throw ArgumentError("layer_norm: affine parameter shape mismatch");
  const double mean = std::accumulate(X.data.begin(), X.data.end(), 0.0) / N;
  double var = 0.0;
  for (double v : X.data) var += (v - mean) * (v - mean);
  var /= N;
  const double inv_std = 1.0 / std::sqrt(var + eps);
  Tensor out(X.shape);
  std::vector<double> xhat(N);
  for (int c = 0; c < C; ++c) {
    const double g = gamma.value().data[c], bt = beta.value().data[c];
    for (std::size_t i = c * n; i < (c + 1) * n; ++i) {
      xhat[i] = (X.data[i] - mean) * inv_std;
      out.data[i] = g * xhat[i] + bt;
    }
  }
  const int xid = x.id(), gid = gamma.id(), bid = beta.id();
  return x.tape()->record(std::move(out), {x, gamma, beta},
                          [=, xhat = std::move(xhat)](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    const Tensor& gam = t.value(gid);
    Tensor* GG = t.requires_grad(gid) ? &t.grad_buffer(gid) : nullptr;
    Tensor* GB = t.requires_grad(bid) ? &t.grad_buffer(bid) : nullptr;
    // dy/dxhat = gamma_c * G; then the usual normalization backward over all N entries.
    std::vector<double> gh(N);
    double sum_gh = 0.0, sum_ghh = 0.0;
    for (int c = 0; c < C; ++c) {
      double sg = 0.0, sgh = 0.0;
      for (std::size_t i = c * n; i < (c + 1) * n; ++i) {
        sg += G.data[i];
        sgh += G.data[i] * xhat[i];
        gh[i] = gam.data[c] * G.data[i];
        sum_gh += gh[i];
        sum_ghh += gh[i] * xhat[i];
      }
      if (GG) GG->data[c] += sgh;
      if (GB) GB->data[c] += sg;
    }
    if (t.requires_grad(xid)) {
      Tensor& GX = t.grad_buffer(xid);
      const double scale = inv_std / N;
      for (std::size_t i = 0; i < N; ++i) GX.data[i] += scale * (N * gh[i] - sum_gh - xhat[i] * sum_ghh);
    }
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  const int xid = x.id();
  return x.tape()->record(std::move(out), {x}, [=](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    const Tensor& X = t.value(xid);
    Tensor& GX = t.grad_buffer(xid);
    for (std::size_t i = 0; i < G.size(); ++i)
      if (X.data[i] > 0.0) GX.data[i] += G.data[i];
  });
}

Var avg_pool2(Var x) {
  const Tensor& X = x.value();
  require_rank(X, 3, "avg_pool2");
  const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
  if (H % 2 || W % 2) throw ArgumentError("avg_pool2: spatial size must be even, got " + shape_string(X.shape));
  const int h = H / 2, w = W / 2;
  Tensor out({C, h, w});
  for (int c = 0; c < C; ++c)
    for (int r = 0; r < h; ++r)
      for (int q = 0; q < w; ++q) {
        const std::size_t base = (static_cast<std::size_t>(c) * H + 2 * r) * W + 2 * q;
        out.data[(static_cast<std::size_t>(c) * h + r) * w + q] =
            0.25 * (X.data[base] + X.data[base + 1] + X.data[base + W] + X.data[base + W + 1]);
      }
  const int xid = x.id();
  return x.tape()->record(std::move(out), {x}, [=](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    Tensor& GX = t.grad_buffer(xid);
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < h; ++r)
        for (int q = 0; q < w; ++q) {
          const double g = 0.25 * G.data[(static_cast<std::size_t>(c) * h + r) * w + q];
          const std::size_t base = (static_cast<std::size_t>(c) * H + 2 * r) * W + 2 * q;
          GX.data[base] += g;
          GX.data[base + 1] += g;
          GX.data[base + W] += g;
          GX.data[base + W + 1] += g;
        }
  });
}

Var adaptive_avg_pool(Var x, int S) {
  const Tensor& X = x.value();
  require_rank(X, 3, "adaptive_avg_pool");
  const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
  if (S < 1 || S > H || S > W) throw ArgumentError("adaptive_avg_pool: need 1 <= S <= feature size");
  Tensor out({C, S * S});
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < S; ++i) {
      const auto [r0, r1] = pool_cell(i, H, S);
      for (int j = 0; j < S; ++j) {
        const auto [c0, c1] = pool_cell(j, W, S);
        double acc = 0.0;
        for (int r = r0; r < r1; ++r)
          for (int q = c0; q < c1; ++q) acc += X.data[(static_cast<std::size_t>(c) * H + r) * W + q];
        out.at(c, i * S + j) = acc / ((r1 - r0) * (c1 - c0));
      }
    }
  const int xid = x.id();
  return x.tape()->record(std::move(out), {x}, [=](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    Tensor& GX = t.grad_buffer(xid);
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < S; ++i) {
        const auto [r0, r1] = pool_cell(i, H, S);
        for (int j = 0; j < S; ++j) {
          const auto [c0, c1] = pool_cell(j, W, S);
          const double g = G.at(c, i * S + j) / ((r1 - r0) * (c1 - c0));
          for (int r = r0; r < r1; ++r)
            for (int q = c0; q < c1; ++q) GX.data[(static_cast<std::size_t>(c) * H + r) * W + q] += g;
        }
      }
  });
}

Var flatten_spatial(Var x) {
  const Tensor& X = x.value();
  require_rank(X, 3, "flatten_spatial");
  Tensor out({X.dim(0), X.dim(1) * X.dim(2)}, X.data);
  const int xid = x.id();
  return x.tape()->record(std::move(out), {x}, [=](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    Tensor& GX = t.grad_buffer(xid);
    for (std::size_t i = 0; i < G.size(); ++i) GX.data[i] += G.data[i];
  });
}

Var mean_cols(Var x) {
  const Tensor& X = x.value();
  require_rank(X, 2, "mean_cols");
  const int C = X.rows(), n = X.cols();
  if (n == 0) throw ArgumentError("mean_cols: no columns");
  Tensor out({C, 1});
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += X.at(c, i);
    out.data[c] = acc / n;
  }
  const int xid = x.id();
  return x.tape()->record(std::move(out), {x}, [=](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    Tensor& GX = t.grad_buffer(xid);
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < n; ++i) GX.at(c, i) += G.data[c] / n;
  });
}

Var linear(Var x, Var w, Var b) {
  const Tensor& X = x.value();
  const Tensor& Wt = w.value();
  require_rank(X, 2, "linear");
  require_rank(Wt, 2, "linear");
  const int ci = X.rows(), n = X.cols(), co = Wt.rows();
  if (Wt.cols() != ci) throw ArgumentError("linear: weight " + shape_string(Wt.shape) + " vs input " + shape_string(X.shape));
  if (b.value().shape != std::vector<int>{co}) throw ArgumentError("linear: bias shape mismatch");
  Tensor out({co, n});
  for (int o = 0; o < co; ++o) {
    double* orow = out.data.data() + static_cast<std::size_t>(o) * n;
    std::fill(orow, orow + n, b.value().data[o]);
    for (int c = 0; c < ci; ++c) {
      const double wv = Wt.at(o, c);
      const double* xrow = X.data.data() + static_cast<std::size_t>(c) * n;
      for (int i = 0; i < n; ++i) orow[i] += wv * xrow[i];
    }
  }
  const int xid = x.id(), wid = w.id(), bid = b.id();
  return x.tape()->record(std::move(out), {x, w, b}, [=](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    const Tensor& Xv = t.value(xid);
    const Tensor& Wv = t.value(wid);
    Tensor* GX = t.requires_grad(xid) ? &t.grad_buffer(xid) : nullptr;
    Tensor* GW = t.requires_grad(wid) ? &t.grad_buffer(wid) : nullptr;
    Tensor* GB = t.requires_grad(bid) ? &t.grad_buffer(bid) : nullptr;
    for (int o = 0; o < co; ++o) {
      const double* grow = G.data.data() + static_cast<std::size_t>(o) * n;
      if (GB) GB->data[o] += std::accumulate(grow, grow + n, 0.0);
      for (int c = 0; c < ci; ++c) {
        const double* xrow = Xv.data.data() + static_cast<std::size_t>(c) * n;
        if (GW) {
          double acc = 0.0;
          for (int i = 0; i < n; ++i) acc += grow[i] * xrow[i];
          GW->at(o, c) += acc;
        }
        if (GX) {
          const double wv = Wv.at(o, c);
          double* gxrow = GX->data.data() + static_cast<std::size_t>(c) * n;
          for (int i = 0; i < n; ++i) gxrow[i] += wv * grow[i];
        }
      }
    }
  });
}

Var normalize_cols(Var x, double eps) {
  const Tensor& X = x.value();
  require_rank(X, 2, "normalize_cols");
  const int C = X.rows(), n = X.cols();
  std::vector<double> norms(n, 0.0);
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < n; ++i) norms[i] += X.at(c, i) * X.at(c, i);
  for (auto& v : norms) v = std::sqrt(v);
  Tensor out(X.shape);
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < n; ++i) out.at(c, i) = X.at(c, i) / (norms[i] + eps);
  const int xid = x.id();
  return x.tape()->record(std::move(out), {x}, [=, norms = std::move(norms)](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    const Tensor& Xv = t.value(xid);
    Tensor& GX = t.grad_buffer(xid);
    for (int i = 0; i < n; ++i) {
      const double d = norms[i] + eps;
      double xg = 0.0;
      for (int c = 0; c < C; ++c) xg += Xv.at(c, i) * G.at(c, i);
      const double coef = norms[i] > 0.0 ? xg / (d * d * norms[i]) : 0.0;
      for (int c = 0; c < C; ++c) GX.at(c, i) += G.at(c, i) / d - coef * Xv.at(c, i);
    }
  });
}

Var gather_cols(Var x, std::vector<int> index) {
  const Tensor& X = x.value();
  require_rank(X, 2, "gather_cols");
  const int C = X.rows(), n = X.cols(), m = static_cast<int>(index.size());
  Tensor out({C, m});
  for (int j = 0; j < m; ++j) {
    if (index[j] < 0 || index[j] >= n) throw ArgumentError("gather_cols: index out of range");
    for (int c = 0; c < C; ++c) out.at(c, j) = X.at(c, index[j]);
  }
  const int xid = x.id();
  return x.tape()->record(std::move(out), {x}, [=, index = std::move(index)](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    Tensor& GX = t.grad_buffer(xid);
    for (int j = 0; j < m; ++j)
      for (int c = 0; c < C; ++c) GX.at(c, index[j]) += G.at(c, j);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: nothing to concatenate");
  const int C = parts[0].value().rows();
  int total = 0;
  std::vector<int> ids, widths;
  for (const auto& p : parts) {
    require_rank(p.value(), 2, "concat_cols");
    if (p.value().rows() != C) throw ArgumentError("concat_cols: row count mismatch");
    total += p.value().cols();
    ids.push_back(p.id());
    widths.push_back(p.value().cols());
  }
  Tensor out({C, total});
  int off = 0;
  for (const auto& p : parts) {
    const Tensor& P = p.value();
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < P.cols(); ++i) out.at(c, off + i) = P.at(c, i);
    off += P.cols();
  }
  return parts[0].tape()->record(std::move(out), parts, [=](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    int o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        Tensor& GP = t.grad_buffer(ids[k]);
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < widths[k]; ++i) GP.at(c, i) += G.at(c, o + i);
      }
      o += widths[k];
    }
  });
}

Var weighted_mean_cols(Var x, std::vector<double> weights) {
  const Tensor& X = x.value();
  require_rank(X, 2, "weighted_mean_cols");
  const int C = X.rows(), n = X.cols();
  if (static_cast<int>(weights.size()) != n) throw ArgumentError("weighted_mean_cols: weight count mismatch");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw ArgumentError("weighted_mean_cols: weights sum to zero");
  Tensor out({C, 1});
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += weights[i] * X.at(c, i);
    out.data[c] = acc / total;
  }
  const int xid = x.id();
  return x.tape()->record(std::move(out), {x}, [=, weights = std::move(weights)](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    Tensor& GX = t.grad_buffer(xid);
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < n; ++i) GX.at(c, i) += G.data[c] * weights[i] / total;
  });
}

Var matmul_tn(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank(A, 2, "matmul_tn");
  require_rank(B, 2, "matmul_tn");
  if (A.rows() != B.rows()) throw ArgumentError("matmul_tn: inner dimension mismatch");
  const int C = A.rows(), p = A.cols(), n = B.cols();
  Tensor out({p, n});
  for (int c = 0; c < C; ++c)
    for (int r = 0; r < p; ++r) {
      const double av = A.at(c, r);
      const double* brow = B.data.data() + static_cast<std::size_t>(c) * n;
      double* orow = out.data.data() + static_cast<std::size_t>(r) * n;
      for (int i = 0; i < n; ++i) orow[i] += av * brow[i];
    }
  const int aid = a.id(), bid = b.id();
  return a.tape()->record(std::move(out), {a, b}, [=](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    const Tensor& Av = t.value(aid);
    const Tensor& Bv = t.value(bid);
    Tensor* GA = t.requires_grad(aid) ? &t.grad_buffer(aid) : nullptr;
    Tensor* GB = t.requires_grad(bid) ? &t.grad_buffer(bid) : nullptr;
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < p; ++r) {
        const double* grow = G.data.data() + static_cast<std::size_t>(r) * n;
        const double* brow = Bv.data.data() + static_cast<std::size_t>(c) * n;
        if (GA) {
          double acc = 0.0;
          for (int i = 0; i < n; ++i) acc += grow[i] * brow[i];
          GA->at(c, r) += acc;
        }
        if (GB) {
          const double av = Av.at(c, r);
          double* gbrow = GB->data.data() + static_cast<std::size_t>(c) * n;
          for (int i = 0; i < n; ++i) gbrow[i] += av * grow[i];
        }
      }
  });
}

Var max_rows(Var x, int r0, int r1) {
  const Tensor& X = x.value();
  require_rank(X, 2, "max_rows");
  if (r0 < 0 || r1 > X.rows() || r0 >= r1) throw ArgumentError("max_rows: empty or invalid row range");
  const int n = X.cols();
  Tensor out({1, n});
  std::vector<int> arg(n, r0);
  for (int i = 0; i < n; ++i) {
    double best = X.at(r0, i);
    for (int r = r0 + 1; r < r1; ++r)
      if (X.at(r, i) > best) {
        best = X.at(r, i);
        arg[i] = r;
      }
    out.data[i] = best;
  }
  const int xid = x.id();
  return x.tape()->record(std::move(out), {x}, [=, arg = std::move(arg)](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    Tensor& GX = t.grad_buffer(xid);
    for (int i = 0; i < n; ++i) GX.at(arg[i], i) += G.data[i];
  });
}

Var two_class_fg_probability(Var fg, Var bg, double alpha) {
  require_same_shape(fg.value(), bg.value(), "two_class_fg_probability");
  Tensor out(fg.value().shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z = alpha * (fg.value().data[i] - bg.value().data[i]);
    out.data[i] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  const int fid = fg.id(), bid = bg.id();
  return fg.tape()->record(std::move(out), {fg, bg}, [=](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    const Tensor& P = t.value(self);
    Tensor* GF = t.requires_grad(fid) ? &t.grad_buffer(fid) : nullptr;
    Tensor* GB = t.requires_grad(bid) ? &t.grad_buffer(bid) : nullptr;
    for (std::size_t i = 0; i < G.size(); ++i) {
      const double d = G.data[i] * alpha * P.data[i] * (1.0 - P.data[i]);
      if (GF) GF->data[i] += d;
      if (GB) GB->data[i] -= d;
    }
  });
}

std::vector<LerpTap> bilinear_taps(int in_size, int out_size) {
  std::vector<LerpTap> taps(out_size);
  const double s = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    const double src = std::clamp((o + 0.5) * s - 0.5, 0.0, static_cast<double>(in_size - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in_size - 1);
    const double f = src - i0;
    taps[o] = {i0, i1, 1.0 - f, f};
  }
  return taps;
}

Var upsample_bilinear(Var x, int h, int w, int H, int W) {
  const Tensor& X = x.value();
  if (X.shape != std::vector<int>{1, h * w}) throw ArgumentError("upsample_bilinear: expected {1, h*w} input");
  const auto ty = bilinear_taps(h, H);
  const auto tx = bilinear_taps(w, W);
  Tensor out({1, H * W});
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const auto& a = ty[r];
      const auto& b = tx[c];
      const double top = X.data[a.i0 * w + b.i0] * b.w0 + X.data[a.i0 * w + b.i1] * b.w1;
      const double bottom = X.data[a.i1 * w + b.i0] * b.w0 + X.data[a.i1 * w + b.i1] * b.w1;
      out.data[r * W + c] = top * a.w0 + bottom * a.w1;
    }
  const int xid = x.id();
  return x.tape()->record(std::move(out), {x}, [=](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    Tensor& GX = t.grad_buffer(xid);
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        const auto& a = ty[r];
        const auto& b = tx[c];
        const double g = G.data[r * W + c];
        GX.data[a.i0 * w + b.i0] += g * a.w0 * b.w0;
        GX.data[a.i0 * w + b.i1] += g * a.w0 * b.w1;
        GX.data[a.i1 * w + b.i0] += g * a.w1 * b.w0;
        GX.data[a.i1 * w + b.i1] += g * a.w1 * b.w1;
      }
  });
}

double info_nce_term(double pos_dot, std::span<const double> neg_dots, double tau) {
  const double lp = pos_dot / tau;
  double mx = lp;
  for (double d : neg_dots) mx = std::max(mx, d / tau);
  // Neumaier summation keeps the result independent of negative order to ~1 ulp.
  double sum = std::exp(lp - mx), comp = 0.0;
  for (double d : neg_dots) {
    const double term = std::exp(d / tau - mx);
    const double t = sum + term;
    comp += std::abs(sum) >= std::abs(term) ? (sum - t) + term : (term - t) + sum;
    sum = t;
  }
  return -(lp - mx) + std::log(sum + comp);
}

Var info_nce(Var anchors, Var positives, Var negatives, double tau) {
  const Tensor& A = anchors.value();
  const Tensor& P = positives.value();
  const Tensor& N = negatives.value();
  require_rank(A, 2, "info_nce");
  require_same_shape(A, P, "info_nce");
  require_rank(N, 2, "info_nce");
  if (N.rows() != A.rows()) throw ArgumentError("info_nce: negative dimension mismatch");
  if (N.cols() == 0) throw ArgumentError("info_nce: negatives must be non-empty");
  if (!(tau > 0.0)) throw ArgumentError("info_nce: tau must be > 0");
  const int C = A.rows(), n = A.cols(), m = N.cols();
  if (n == 0) throw ArgumentError("info_nce: no anchors");

  // softmax weights per anchor: column 0 is the positive, 1..m the negatives
  std::vector<double> weights(static_cast<std::size_t>(n) * (m + 1));
  std::vector<double> neg(m);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double pd = 0.0;
    for (int c = 0; c < C; ++c) pd += A.at(c, i) * P.at(c, i);
    for (int j = 0; j < m; ++j) {
      double d = 0.0;
      for (int c = 0; c < C; ++c) d += A.at(c, i) * N.at(c, j);
      neg[j] = d;
    }
    total += info_nce_term(pd, neg, tau);
    double mx = pd / tau;
    for (double d : neg) mx = std::max(mx, d / tau);
    double* wrow = weights.data() + static_cast<std::size_t>(i) * (m + 1);
    wrow[0] = std::exp(pd / tau - mx);
    double z = wrow[0];
    for (int j = 0; j < m; ++j) z += (wrow[j + 1] = std::exp(neg[j] / tau - mx));
    for (int j = 0; j <= m; ++j) wrow[j] /= z;
  }
  const int aid = anchors.id(), pid = positives.id(), nid = negatives.id();
  return anchors.tape()->record(Tensor::scalar(total / n), {anchors, positives, negatives},
                                [=, weights = std::move(weights)](Tape& t, int self) {
    const double g = t.grad(self).data[0] / (n * tau);
    const Tensor& Av = t.value(aid);
    const Tensor& Pv = t.value(pid);
    const Tensor& Nv = t.value(nid);
    Tensor* GA = t.requires_grad(aid) ? &t.grad_buffer(aid) : nullptr;
    Tensor* GP = t.requires_grad(pid) ? &t.grad_buffer(pid) : nullptr;
    Tensor* GN = t.requires_grad(nid) ? &t.grad_buffer(nid) : nullptr;
    for (int i = 0; i < n; ++i) {
      const double* wrow = weights.data() + static_cast<std::size_t>(i) * (m + 1);
      const double wp = wrow[0] - 1.0;
      for (int c = 0; c < C; ++c) {
        if (GA) {
          double acc = wp * Pv.at(c, i);
          for (int j = 0; j < m; ++j) acc += wrow[j + 1] * Nv.at(c, j);
          GA->at(c, i) += g * acc;
        }
        if (GP) GP->at(c, i) += g * wp * Av.at(c, i);
        if (GN)
          for (int j = 0; j < m; ++j) GN->at(c, j) += g * wrow[j + 1] * Av.at(c, i);
      }
    }
  });
}

Var binary_cross_entropy(Var p_fg, std::span<const std::uint8_t> target) {
  const Tensor& P = p_fg.value();
  if (P.size() != target.size()) throw ArgumentError("binary_cross_entropy: size mismatch");
  if (P.size() == 0) throw ArgumentError("binary_cross_entropy: empty input");
  constexpr double kFloor = 1e-12;
  double total = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double q = target[i] ? P.data[i] : 1.0 - P.data[i];
    total -= std::log(std::max(q, kFloor));
  }
  const std::size_t n = P.size();
  std::vector<std::uint8_t> tgt(target.begin(), target.end());
  const int pid = p_fg.id();
  return p_fg.tape()->record(Tensor::scalar(total / n), {p_fg}, [=, tgt = std::move(tgt)](Tape& t, int self) {
    const double g = t.grad(self).data[0] / n;
    const Tensor& Pv = t.value(pid);
    Tensor& GP = t.grad_buffer(pid);
    for (std::size_t i = 0; i < n; ++i) {
      const double q = tgt[i] ? Pv.data[i] : 1.0 - Pv.data[i];
      if (q <= kFloor) continue;
      GP.data[i] += tgt[i] ? -g / q : g / q;
    }
  });
}

Var binary_cross_entropy(Var p_fg, Var p_bg, std::span<const std::uint8_t> target) {
  const Tensor& F = p_fg.value();
  const Tensor& B = p_bg.value();
  require_same_shape(F, B, "binary_cross_entropy");
  if (F.size() != target.size()) throw ArgumentError("binary_cross_entropy: size mismatch");
  if (F.size() == 0) throw ArgumentError("binary_cross_entropy: empty input");
  constexpr double kFloor = 1e-12;
  double total = 0.0;
  for (std::size_t i = 0; i < F.size(); ++i) total -= std::log(std::max(target[i] ? F.data[i] : B.data[i], kFloor));
  const std::size_t n = F.size();
  std::vector<std::uint8_t> tgt(target.begin(), target.end());
  const int fid = p_fg.id(), bid = p_bg.id();
  return p_fg.tape()->record(Tensor::scalar(total / n), {p_fg, p_bg}, [=, tgt = std::move(tgt)](Tape& t, int self) {
    const double g = t.grad(self).data[0] / n;
    for (std::size_t i = 0; i < n; ++i) {
      const int id = tgt[i] ? fid : bid;
      if (!t.requires_grad(id)) continue;
      const double q = t.value(id).data[i];
      if (q <= kFloor) continue;
      t.grad_buffer(id).data[i] -= g / q;
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
  const int aid = a.id(), bid = b.id();
  return a.tape()->record(std::move(out), {a, b}, [=](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    for (int id : {aid, bid}) {
      if (!t.requires_grad(id)) continue;
      Tensor& GX = t.grad_buffer(id);
      for (std::size_t i = 0; i < G.size(); ++i) GX.data[i] += G.data[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data) v *= s;
  const int aid = a.id();
  return a.tape()->record(std::move(out), {a}, [=](Tape& t, int self) {
    const Tensor& G = t.grad(self);
    Tensor& GX = t.grad_buffer(aid);
    for (std::size_t i = 0; i < G.size(); ++i) GX.data[i] += s * G.data[i];
  });
}

Var weighted_sum(std::span<const Var> parts, std::span<const double> coeffs) {
  if (parts.empty() || parts.size() != coeffs.size()) throw ArgumentError("weighted_sum: bad arguments");
  double total = 0.0;
  std::vector<int> ids;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    total += coeffs[k] * parts[k].value().item();
    ids.push_back(parts[k].id());
  }
  std::vector<double> cs(coeffs.begin(), coeffs.end());
  return parts[0].tape()->record(Tensor::scalar(total), parts, [=](Tape& t, int self) {
    const double g = t.grad(self).data[0];
    for (std::size_t k = 0; k < ids.size(); ++k)
      if (t.requires_grad(ids[k])) t.grad_buffer(ids[k]).data[0] += cs[k] * g;
  });
}

}  // namespace densemp::ad
