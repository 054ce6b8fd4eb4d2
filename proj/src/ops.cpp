#include "natreg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "natreg/errors.hpp"

NATREG_NAMESPACE_BEGIN

namespace {

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

Tensor make_output(Shape shape, std::vector<real> data, bool track) {
  return Tensor::from(std::move(shape), std::move(data), track);
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

// C[m×n] += A[m×k]·B[k×n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const real* a, const real* b, real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    real* ci = c + i * n;
    const real* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const real aip = ai[p];
      if (aip == real(0)) continue;
      const real* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[m×n] += A[m×k]·B[n×k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const real* a, const real* b, real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const real* ai = a + i * k;
    real* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const real* bj = b + j * k;
      real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[m×n] += A[k×m]^T·B[k×n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const real* a, const real* b, real* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const real* ap = a + p * m;
    const real* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const real api = ap[i];
      if (api == real(0)) continue;
      real* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1);
  const std::size_t bk = transpose_b ? b.dim(1) : b.dim(0);
  const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
  if (k != bk) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) +
                         (transpose_b ? " x transpose " : " x ") + shape_string(b.shape()));
  }
  std::vector<real> out(m * n, real(0));
  if (transpose_b) {
    gemm_nt(m, n, k, a.data().data(), b.data().data(), out.data());
  } else {
    gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  }
  const bool track = tracking({&a, &b});
  Tensor c = make_output({m, n}, std::move(out), track);
  if (track) {
    active_tape()->record([a, b, c, m, n, k, transpose_b]() mutable {
      if (!c.has_grad()) return;
      const real* dc = c.grad_view().data();
      if (a.requires_grad()) {
        if (transpose_b) {
          gemm_nn(m, k, n, dc, b.data().data(), a.grad().data());
        } else {
          gemm_nt(m, k, n, dc, b.data().data(), a.grad().data());
        }
      }
      if (b.requires_grad()) {
        if (transpose_b) {
          gemm_tn(n, k, m, dc, a.data().data(), b.grad().data());
        } else {
          gemm_tn(k, n, m, a.data().data(), dc, b.grad().data());
        }
      }
    });
  }
  return c;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_matrix(x, "linear");
  require_matrix(weight, "linear");
  const std::size_t rows = x.dim(0), in = x.dim(1), out = weight.dim(1);
  if (weight.dim(0) != in || bias.numel() != out) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " weight " +
                         shape_string(weight.shape()) + " bias " + shape_string(bias.shape()));
  }
  std::vector<real> y(rows * out);
  const auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy(b.begin(), b.end(), y.begin() + r * out);
  gemm_nn(rows, out, in, x.data().data(), weight.data().data(), y.data());
  const bool track = tracking({&x, &weight, &bias});
  Tensor c = make_output({rows, out}, std::move(y), track);
  if (track) {
    active_tape()->record([x, weight, bias, c, rows, in, out]() mutable {
      if (!c.has_grad()) return;
      const real* dc = c.grad_view().data();
      if (x.requires_grad()) gemm_nt(rows, in, out, dc, weight.data().data(), x.grad().data());
      if (weight.requires_grad()) gemm_tn(in, out, rows, x.data().data(), dc, weight.grad().data());
      if (bias.requires_grad()) {
        auto db = bias.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < out; ++j) db[j] += dc[r * out + j];
      }
    });
  }
  return c;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<real> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  const bool track = tracking({&a, &b});
  Tensor c = make_output(a.shape(), std::move(y), track);
  if (track) {
    active_tape()->record([a, b, c]() mutable {
      if (!c.has_grad()) return;
      if (a.requires_grad()) a.accumulate_grad(c.grad_view());
      if (b.requires_grad()) b.accumulate_grad(c.grad_view());
    });
  }
  return c;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (bias.numel() != d) {
    throw DimensionError("add_bias: input " + shape_string(x.shape()) + " bias " +
                         shape_string(bias.shape()));
  }
  std::vector<real> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] = x.data()[r * d + j] + bias.data()[j];
  const bool track = tracking({&x, &bias});
  Tensor c = make_output(x.shape(), std::move(y), track);
  if (track) {
    active_tape()->record([x, bias, c, rows, d]() mutable {
      if (!c.has_grad()) return;
      const auto dc = c.grad_view();
      if (x.requires_grad()) x.accumulate_grad(dc);
      if (bias.requires_grad()) {
        auto db = bias.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) db[j] += dc[r * d + j];
      }
    });
  }
  return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<real> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  const bool track = tracking({&a, &b});
  Tensor c = make_output(a.shape(), std::move(y), track);
  if (track) {
    active_tape()->record([a, b, c]() mutable {
      if (!c.has_grad()) return;
      const auto dc = c.grad_view();
      if (a.requires_grad()) {
        auto da = a.grad();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += dc[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad();
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += dc[i] * a.data()[i];
      }
    });
  }
  return c;
}

Tensor scale(const Tensor& x, real factor) {
  std::vector<real> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.data()[i] * factor;
  const bool track = tracking({&x});
  Tensor c = make_output(x.shape(), std::move(y), track);
  if (track) {
    active_tape()->record([x, c, factor]() mutable {
      if (!c.has_grad()) return;
      auto dx = x.grad();
      const auto dc = c.grad_view();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dc[i] * factor;
    });
  }
  return c;
}

Tensor add_scalar(const Tensor& x, real value) {
  std::vector<real> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.data()[i] + value;
  const bool track = tracking({&x});
  Tensor c = make_output(x.shape(), std::move(y), track);
  if (track) {
    active_tape()->record([x, c]() mutable {
      if (c.has_grad()) x.accumulate_grad(c.grad_view());
    });
  }
  return c;
}

namespace {
thread_local std::vector<bool>* g_relu_pattern = nullptr;
}  // namespace

ReluPatternScope::ReluPatternScope(std::vector<bool>& out) : previous_(g_relu_pattern) {
  g_relu_pattern = &out;
}

ReluPatternScope::~ReluPatternScope() { g_relu_pattern = previous_; }

Tensor relu(const Tensor& x) {
  std::vector<real> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(x.data()[i], real(0));
  if (g_relu_pattern) {
    for (const real v : x.data()) g_relu_pattern->push_back(v > real(0));
  }
  const bool track = tracking({&x});
  Tensor c = make_output(x.shape(), std::move(y), track);
  if (track) {
    active_tape()->record([x, c]() mutable {
      if (!c.has_grad()) return;
      auto dx = x.grad();
      const auto dc = c.grad_view();
      const auto xv = x.data();
      for (std::size_t i = 0; i < dx.size(); ++i)
        if (xv[i] > real(0)) dx[i] += dc[i];
    });
  }
  return c;
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t rows = x.rows(), n = x.cols();
  if (n == 0) throw DimensionError("softmax_rows: empty rows");
  std::vector<real> y(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const real* xr = xv.data() + r * n;
    real* yr = y.data() + r * n;
    const real mx = *std::max_element(xr, xr + n);
    real total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= total;
  }
  const bool track = tracking({&x});
  Tensor c = make_output(x.shape(), std::move(y), track);
  if (track) {
    active_tape()->record([x, c, rows, n]() mutable {
      if (!c.has_grad()) return;
      auto dx = x.grad();
      const auto dy = c.grad_view();
      const auto yv = c.data();
      for (std::size_t r = 0; r < rows; ++r) {
        real dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += dy[r * n + j] * yv[r * n + j];
        for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += yv[r * n + j] * (dy[r * n + j] - dot);
      }
    });
  }
  return c;
}

Tensor log_softmax_rows(const Tensor& x) {
  const std::size_t rows = x.rows(), n = x.cols();
  if (n == 0) throw DimensionError("log_softmax_rows: empty rows");
  std::vector<real> y(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const real* xr = xv.data() + r * n;
    const real mx = *std::max_element(xr, xr + n);
    real total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(xr[j] - mx);
    const real lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = xr[j] - lse;
  }
  const bool track = tracking({&x});
  Tensor c = make_output(x.shape(), std::move(y), track);
  if (track) {
    active_tape()->record([x, c, rows, n]() mutable {
      if (!c.has_grad()) return;
      auto dx = x.grad();
      const auto dy = c.grad_view();
      const auto yv = c.data();
      for (std::size_t r = 0; r < rows; ++r) {
        real total = 0;
        for (std::size_t j = 0; j < n; ++j) total += dy[r * n + j];
        for (std::size_t j = 0; j < n; ++j)
          dx[r * n + j] += dy[r * n + j] - std::exp(yv[r * n + j]) * total;
      }
    });
  }
  return c;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, real eps) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: input " + shape_string(x.shape()) + " gain " +
                         shape_string(gain.shape()) + " bias " + shape_string(bias.shape()));
  }
  std::vector<real> y(x.numel()), xhat(x.numel()), rstd(rows);
  const auto xv = x.data();
  const auto g = gain.data();
  const auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const real* xr = xv.data() + r * d;
    real mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= real(d);
    real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= real(d);
    rstd[r] = real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mean) * rstd[r];
      y[r * d + j] = xhat[r * d + j] * g[j] + b[j];
    }
  }
  const bool track = tracking({&x, &gain, &bias});
  Tensor c = make_output(x.shape(), std::move(y), track);
  if (track) {
    active_tape()->record([x, gain, bias, c, rows, d, xhat = std::move(xhat),
                           rstd = std::move(rstd)]() mutable {
      if (!c.has_grad()) return;
      const auto dy = c.grad_view();
      const auto g = gain.data();
      if (gain.requires_grad()) {
        auto dg = gain.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) dg[j] += dy[r * d + j] * xhat[r * d + j];
      }
      if (bias.requires_grad()) {
        auto db = bias.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) db[j] += dy[r * d + j];
      }
      if (x.requires_grad()) {
        auto dx = x.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          real mean_dxhat = 0, mean_dxhat_xhat = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const real dxh = dy[r * d + j] * g[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[r * d + j];
          }
          mean_dxhat /= real(d);
          mean_dxhat_xhat /= real(d);
          for (std::size_t j = 0; j < d; ++j) {
            const real dxh = dy[r * d + j] * g[j];
            dx[r * d + j] += rstd[r] * (dxh - mean_dxhat - xhat[r * d + j] * mean_dxhat_xhat);
          }
        }
      }
    });
  }
  return c;
}

Tensor dropout(const Tensor& x, real rate, Rng& rng) {
  if (rate <= real(0)) return x;
  if (rate >= real(1)) throw ContractError("dropout rate must be in [0,1)");
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const real factor = real(1) / (real(1) - rate);
  std::vector<real> mask(x.numel());
  std::vector<real> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    mask[i] = keep(rng) ? factor : real(0);
    y[i] = x.data()[i] * mask[i];
  }
  const bool track = tracking({&x});
  Tensor c = make_output(x.shape(), std::move(y), track);
  if (track) {
    active_tape()->record([x, c, mask = std::move(mask)]() mutable {
      if (!c.has_grad()) return;
      auto dx = x.grad();
      const auto dc = c.grad_view();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dc[i] * mask[i];
    });
  }
  return c;
}

Tensor embedding(const Tensor& table, std::span<const TokenId> ids, real factor, bool stop_grad) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<real> y(ids.size() * d);
  const auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ContractError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                          std::to_string(vocab));
    }
    const real* row = tv.data() + static_cast<std::size_t>(ids[i]) * d;
    for (std::size_t j = 0; j < d; ++j) y[i * d + j] = row[j] * factor;
  }
  const bool track = !stop_grad && tracking({&table});
  Tensor c = make_output({ids.size(), d}, std::move(y), track);
  if (track) {
    active_tape()->record(
        [table, c, d, factor, ids = std::vector<TokenId>(ids.begin(), ids.end())]() mutable {
          if (!c.has_grad()) return;
          auto dt = table.grad();
          const auto dc = c.grad_view();
          for (std::size_t i = 0; i < ids.size(); ++i) {
            real* row = dt.data() + static_cast<std::size_t>(ids[i]) * d;
            for (std::size_t j = 0; j < d; ++j) row[j] += dc[i * d + j] * factor;
          }
        });
  }
  return c;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  const std::size_t rows = x.rows(), d = x.cols();
  std::vector<real> y(index.size() * d);
  const auto xv = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw ContractError("gather_rows: row " + std::to_string(index[i]) + " of " +
                          std::to_string(rows));
    }
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(index[i] * d), d, y.begin() + i * d);
  }
  const bool track = tracking({&x});
  Tensor c = make_output({index.size(), d}, std::move(y), track);
  if (track) {
    active_tape()->record(
        [x, c, d, index = std::vector<std::size_t>(index.begin(), index.end())]() mutable {
          if (!c.has_grad()) return;
          auto dx = x.grad();
          const auto dc = c.grad_view();
          for (std::size_t i = 0; i < index.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) dx[index[i] * d + j] += dc[i * d + j];
        });
  }
  return c;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") of " + shape_string(x.shape()));
  }
  std::vector<std::size_t> index(count);
  for (std::size_t i = 0; i < count; ++i) index[i] = begin + i;
  return gather_rows(x, index);
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw EmptySequenceError("concat_rows: no parts");
  const std::size_t d = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != d) {
      throw DimensionError("concat_rows: widths " + shape_string(parts.front().shape()) + " and " +
                           shape_string(p.shape()));
    }
    rows += p.rows();
  }
  std::vector<real> y;
  y.reserve(rows * d);
  bool track = false;
  for (const auto& p : parts) {
    y.insert(y.end(), p.data().begin(), p.data().end());
    track = track || tracking({&p});
  }
  Tensor c = make_output({rows, d}, std::move(y), track);
  if (track) {
    active_tape()->record([parts = std::vector<Tensor>(parts.begin(), parts.end()), c]() mutable {
      if (!c.has_grad()) return;
      const auto dc = c.grad_view();
      std::size_t offset = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) p.accumulate_grad(dc.subspan(offset, p.numel()));
        offset += p.numel();
      }
    });
  }
  return c;
}

Tensor detach(const Tensor& x) {
  return Tensor::from(x.shape(), std::vector<real>(x.data().begin(), x.data().end()), false);
}

Tensor sum(const Tensor& x) {
  real total = 0;
  for (real v : x.data()) total += v;
  const bool track = tracking({&x});
  Tensor c = make_output({}, {total}, track);
  if (track) {
    active_tape()->record([x, c]() mutable {
      if (!c.has_grad()) return;
      const real g = c.grad_view()[0];
      for (auto& v : x.grad()) v += g;
    });
  }
  return c;
}

Tensor weighted_sum(const Tensor& x, std::span<const real> weights) {
  if (weights.size() != x.numel()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                         shape_string(x.shape()));
  }
  real total = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += weights[i] * x.data()[i];
  const bool track = tracking({&x});
  Tensor c = make_output({}, {total}, track);
  if (track) {
    active_tape()->record(
        [x, c, weights = std::vector<real>(weights.begin(), weights.end())]() mutable {
          if (!c.has_grad()) return;
          const real g = c.grad_view()[0];
          auto dx = x.grad();
          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * weights[i];
        });
  }
  return c;
}

Tensor add_scalars(std::span<const Tensor> terms) {
  real total = 0;
  bool track = false;
  for (const auto& t : terms) {
    total += t.item();
    track = track || tracking({&t});
  }
  Tensor c = make_output({}, {total}, track);
  if (track) {
    active_tape()->record([terms = std::vector<Tensor>(terms.begin(), terms.end()), c]() mutable {
      if (!c.has_grad()) return;
      const real g = c.grad_view()[0];
      for (auto& t : terms)
        if (t.requires_grad()) t.grad()[0] += g;
    });
  }
  return c;
}

Tensor cosine_sim_rows(const Tensor& u, const Tensor& v, bool stop_grad_v) {
  require_same_shape(u, v, "cosine_sim");
  const std::size_t n = u.rows(), d = u.cols();
  if (d == 0) throw DimensionError("cosine_sim: zero-width vectors");
  std::vector<real> y(n), nu(n), nv(n);
  std::vector<bool> u_clamped(n), v_clamped(n);
  const auto uv = u.data();
  const auto vv = v.data();
  for (std::size_t r = 0; r < n; ++r) {
    real dot = 0, su = 0, sv = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const real a = uv[r * d + j], b = vv[r * d + j];
      dot += a * b;
      su += a * a;
      sv += b * b;
    }
    const real lu = std::sqrt(su), lv = std::sqrt(sv);
    u_clamped[r] = lu < kCosineEps;
    v_clamped[r] = lv < kCosineEps;
    nu[r] = std::max(lu, kCosineEps);
    nv[r] = std::max(lv, kCosineEps);
    y[r] = dot / (nu[r] * nv[r]);
  }
  const bool grad_u = tracking({&u});
  const bool grad_v = !stop_grad_v && tracking({&v});
  const bool track = grad_u || grad_v;
  Tensor c = make_output(u.rank() == 1 ? Shape{} : Shape{n}, std::move(y), track);
  if (track) {
    active_tape()->record([u, v, c, n, d, grad_u, grad_v, nu = std::move(nu), nv = std::move(nv),
                           u_clamped = std::move(u_clamped),
                           v_clamped = std::move(v_clamped)]() mutable {
      if (!c.has_grad()) return;
      const auto dc = c.grad_view();
      const auto cv = c.data();
      const auto uv = u.data();
      const auto vv = v.data();
      std::span<real> du = grad_u ? u.grad() : std::span<real>{};
      std::span<real> dv = grad_v ? v.grad() : std::span<real>{};
      for (std::size_t r = 0; r < n; ++r) {
        const real g = dc[r];
        const real inv = real(1) / (nu[r] * nv[r]);
        for (std::size_t j = 0; j < d; ++j) {
          const real a = uv[r * d + j], b = vv[r * d + j];
          if (grad_u) {
            real t = b * inv;
            if (!u_clamped[r]) t -= cv[r] * a / (nu[r] * nu[r]);
            du[r * d + j] += g * t;
          }
          if (grad_v) {
            real t = a * inv;
            if (!v_clamped[r]) t -= cv[r] * b / (nv[r] * nv[r]);
            dv[r * d + j] += g * t;
          }
        }
      }
    });
  }
  return c;
}

Tensor cosine_sim(const Tensor& u, const Tensor& v, bool stop_grad_v) {
  if (u.numel() != v.numel() || u.numel() == 0) {
    throw DimensionError("cosine_sim: vectors " + shape_string(u.shape()) + " and " +
                         shape_string(v.shape()));
  }
  return cosine_sim_rows(u, v, stop_grad_v);
}

Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets) {
  require_matrix(logits, "cross_entropy");
  const std::size_t rows = logits.dim(0), n = logits.dim(1);
  if (targets.size() != rows) {
    throw ContractError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(rows) + " positions");
  }
  std::vector<real> probs(rows * n);
  real total = 0;
  const auto xv = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= n) {
      throw ContractError("cross_entropy: target " + std::to_string(targets[r]) +
                          " outside vocabulary of " + std::to_string(n));
    }
    const real* xr = xv.data() + r * n;
    const real mx = *std::max_element(xr, xr + n);
    real z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      probs[r * n + j] = std::exp(xr[j] - mx);
      z += probs[r * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) probs[r * n + j] /= z;
    total += mx + std::log(z) - xr[static_cast<std::size_t>(targets[r])];
  }
  const bool track = tracking({&logits});
  Tensor c = make_output({}, {total}, track);
  if (track) {
    active_tape()->record([logits, c, n, probs = std::move(probs),
                           targets = std::vector<TokenId>(targets.begin(), targets.end())]() mutable {
      if (!c.has_grad()) return;
      const real g = c.grad_view()[0];
      auto dx = logits.grad();
      for (std::size_t r = 0; r < targets.size(); ++r) {
        for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += g * probs[r * n + j];
        dx[r * n + static_cast<std::size_t>(targets[r])] -= g;
      }
    });
  }
  return c;
}

namespace {

bool allowed(AttentionMask mask, const AttentionSegment& s, std::size_t i, std::size_t j) {
  if (j >= s.k_valid) return false;
  return mask != AttentionMask::Causal || j <= i;
}

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::span<const AttentionSegment> segments, std::size_t n_heads,
                 AttentionMask mask, std::vector<real>* probs_out) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  const std::size_t d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || k.dim(0) != v.dim(0)) {
    throw DimensionError("attention: query " + shape_string(q.shape()) + " key " +
                         shape_string(k.shape()) + " value " + shape_string(v.shape()));
  }
  if (n_heads == 0 || d % n_heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
  const std::size_t dh = d / n_heads;
  const real inv_sqrt = real(1) / std::sqrt(real(dh));
  const auto qv = q.data();
  const auto kv = k.data();
  const auto vv = v.data();
  std::vector<real> out(q.numel(), real(0));
  // Attention probabilities, segment-major then head-major, kept for backward.
  std::vector<real> probs;
  for (const auto& s : segments) {
    if (s.k_len == 0 || s.k_valid == 0) throw EmptySequenceError("attention: empty key sequence");
    if (s.k_valid > s.k_len || s.q_offset + s.q_len > q.dim(0) || s.k_offset + s.k_len > k.dim(0)) {
      throw DimensionError("attention: segment outside packed rows");
    }
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t col = h * dh;
      for (std::size_t i = 0; i < s.q_len; ++i) {
        const real* qi = qv.data() + (s.q_offset + i) * d + col;
        const std::size_t base = probs.size();
        probs.resize(base + s.k_len, real(0));
        real* pi = probs.data() + base;
        real mx = -std::numeric_limits<real>::infinity();
        for (std::size_t j = 0; j < s.k_len; ++j) {
          if (!allowed(mask, s, i, j)) continue;
          const real* kj = kv.data() + (s.k_offset + j) * d + col;
          real dot = 0;
          for (std::size_t p = 0; p < dh; ++p) dot += qi[p] * kj[p];
          pi[j] = dot * inv_sqrt;
          mx = std::max(mx, pi[j]);
        }
        real z = 0;
        for (std::size_t j = 0; j < s.k_len; ++j) {
          if (!allowed(mask, s, i, j)) {
            pi[j] = 0;
            continue;
          }
          pi[j] = std::exp(pi[j] - mx);
          z += pi[j];
        }
        real* oi = out.data() + (s.q_offset + i) * d + col;
        for (std::size_t j = 0; j < s.k_len; ++j) {
          pi[j] /= z;
          if (pi[j] == real(0)) continue;
          const real* vj = vv.data() + (s.k_offset + j) * d + col;
          for (std::size_t p = 0; p < dh; ++p) oi[p] += pi[j] * vj[p];
        }
      }
    }
  }
  if (probs_out != nullptr) *probs_out = probs;
  const bool track = tracking({&q, &k, &v});
  Tensor c = make_output(q.shape(), std::move(out), track);
  if (track) {
    active_tape()->record([q, k, v, c, n_heads, d, dh, inv_sqrt, probs = std::move(probs),
                           segs = std::vector<AttentionSegment>(segments.begin(),
                                                                segments.end())]() mutable {
      if (!c.has_grad()) return;
      const auto dout = c.grad_view();
      const auto qv = q.data();
      const auto kv = k.data();
      const auto vv = v.data();
      std::span<real> dq = q.requires_grad() ? q.grad() : std::span<real>{};
      std::span<real> dk = k.requires_grad() ? k.grad() : std::span<real>{};
      std::span<real> dvv = v.requires_grad() ? v.grad() : std::span<real>{};
      std::vector<real> dp;
      std::size_t cursor = 0;
      for (const auto& s : segs) {
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t col = h * dh;
          for (std::size_t i = 0; i < s.q_len; ++i) {
            const real* pi = probs.data() + cursor;
            cursor += s.k_len;
            const real* doi = dout.data() + (s.q_offset + i) * d + col;
            dp.assign(s.k_len, real(0));
            real dot = 0;
            for (std::size_t j = 0; j < s.k_len; ++j) {
              if (pi[j] == real(0)) continue;
              const real* vj = vv.data() + (s.k_offset + j) * d + col;
              real acc = 0;
              for (std::size_t p = 0; p < dh; ++p) acc += doi[p] * vj[p];
              dp[j] = acc;
              dot += acc * pi[j];
              if (!dvv.empty()) {
                real* dvj = dvv.data() + (s.k_offset + j) * d + col;
                for (std::size_t p = 0; p < dh; ++p) dvj[p] += pi[j] * doi[p];
              }
            }
            const real* qi = qv.data() + (s.q_offset + i) * d + col;
            for (std::size_t j = 0; j < s.k_len; ++j) {
              if (pi[j] == real(0)) continue;
              const real ds = pi[j] * (dp[j] - dot) * inv_sqrt;
              const real* kj = kv.data() + (s.k_offset + j) * d + col;
              if (!dq.empty()) {
                real* dqi = dq.data() + (s.q_offset + i) * d + col;
                for (std::size_t p = 0; p < dh; ++p) dqi[p] += ds * kj[p];
              }
              if (!dk.empty()) {
                real* dkj = dk.data() + (s.k_offset + j) * d + col;
                for (std::size_t p = 0; p < dh; ++p) dkj[p] += ds * qi[p];
              }
            }
          }
        }
      }
    });
  }
  return c;
}

NATREG_NAMESPACE_END
