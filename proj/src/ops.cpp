#include "afp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Core>

namespace afp::num {

namespace {

template <class T>
void require_same_shape(const Graph<T>& g, Var a, Var b, std::string_view op) {
  if (g.shape(a) != g.shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(g.shape(a)) +
                         " vs " + shape_str(g.shape(b)));
  }
}

template <class T>
void require_rank2(const Graph<T>& g, Var a, std::string_view op) {
  if (g.shape(a).size() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_str(g.shape(a)));
  }
}

template <class T>
void require_no_nan(std::span<const T> xs, std::string_view op) {
  for (T x : xs) {
    if (std::isnan(x)) throw NumericError(std::string(op) + ": NaN input");
  }
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<const RowMat<T>> map(const T* p, std::size_t r, std::size_t c) {
  return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

template <class T>
Eigen::Map<RowMat<T>> cmap(T* p, std::size_t r, std::size_t c) {
  return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCoeff = 0.044715;

}  // namespace

std::string_view pooling_name(Pooling p) {
  switch (p) {
    case Pooling::mean:
      return "mean";
    case Pooling::max:
      return "max";
    case Pooling::last_token:
      return "last_token";
  }
  return "mean";
}

Pooling parse_pooling(std::string_view name) {
  if (name == "mean") return Pooling::mean;
  if (name == "max") return Pooling::max;
  if (name == "last_token" || name == "last") return Pooling::last_token;
  throw ConfigError("unknown pooling method '" + std::string(name) + "'");
}

template <class T>
Var matmul(Graph<T>& g, Var a, Var b) {
  require_rank2(g, a, "matmul");
  require_rank2(g, b, "matmul");
  const auto& A = g.value(a);
  const auto& B = g.value(b);
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  if (B.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(A.shape()) + " x " +
                         shape_str(B.shape()));
  }
  Tensor<T> C({m, n});
  cmap<T>(C.data().data(), m, n).noalias() = map<T>(A.data().data(), m, k) * map<T>(B.data().data(), k, n);
  return g.record("matmul", std::move(C), {a, b}, [a, b, m, k, n](Graph<T>& g, std::uint32_t self) {
    auto dc = g.out_grad(self);
    const auto DC = map<T>(dc.data(), m, n);
    if (auto da = g.grad_sink(a); !da.empty()) {
      cmap<T>(da.data(), m, k).noalias() += DC * map<T>(g.value(b).data().data(), k, n).transpose();
    }
    if (auto db = g.grad_sink(b); !db.empty()) {
      cmap<T>(db.data(), k, n).noalias() += map<T>(g.value(a).data().data(), m, k).transpose() * DC;
    }
  });
}

template <class T>
Var transpose(Graph<T>& g, Var a) {
  require_rank2(g, a, "transpose");
  const auto& A = g.value(a);
  const std::size_t m = A.dim(0), n = A.dim(1);
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return g.record("transpose", std::move(out), {a}, [a, m, n](Graph<T>& g, std::uint32_t self) {
    auto dy = g.out_grad(self);
    auto dx = g.grad_sink(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += dy[j * m + i];
  });
}

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  require_same_shape(g, a, b, "add");
  Tensor<T> out = g.value(a);
  const auto& B = g.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return g.record("add", std::move(out), {a, b}, [a, b](Graph<T>& g, std::uint32_t self) {
    auto dy = g.out_grad(self);
    for (Var v : {a, b}) {
      auto dx = g.grad_sink(v);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    }
  });
}

template <class T>
Var sub(Graph<T>& g, Var a, Var b) {
  require_same_shape(g, a, b, "sub");
  Tensor<T> out = g.value(a);
  const auto& B = g.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return g.record("sub", std::move(out), {a, b}, [a, b](Graph<T>& g, std::uint32_t self) {
    auto dy = g.out_grad(self);
    auto da = g.grad_sink(a);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
    auto db = g.grad_sink(b);
    for (std::size_t i = 0; i < db.size(); ++i) db[i] -= dy[i];
  });
}

template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
  require_same_shape(g, a, b, "mul");
  Tensor<T> out = g.value(a);
  const auto& B = g.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return g.record("mul", std::move(out), {a, b}, [a, b](Graph<T>& g, std::uint32_t self) {
    auto dy = g.out_grad(self);
    const auto& A = g.value(a);
    const auto& B = g.value(b);
    if (auto da = g.grad_sink(a); !da.empty())
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * B[i];
    if (auto db = g.grad_sink(b); !db.empty())
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * A[i];
  });
}

template <class T>
Var scale(Graph<T>& g, Var a, double c) {
  Tensor<T> out = g.value(a);
  const T s = static_cast<T>(c);
  for (auto& x : out.vec()) x *= s;
  return g.record("scale", std::move(out), {a}, [a, s](Graph<T>& g, std::uint32_t self) {
    auto dy = g.out_grad(self);
    auto dx = g.grad_sink(a);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += s * dy[i];
  });
}

template <class T>
Var gelu(Graph<T>& g, Var x) {
  const auto& X = g.value(x);
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    const T v = X[i];
    const T t = std::tanh(static_cast<T>(kSqrt2OverPi) * (v + static_cast<T>(kGeluCoeff) * v * v * v));
    out[i] = T(0.5) * v * (T(1) + t);
  }
  const bool corrupt = g.options().corrupt_gelu_backward;
  return g.record("gelu", std::move(out), {x}, [x, corrupt](Graph<T>& g, std::uint32_t self) {
    auto dy = g.out_grad(self);
    auto dx = g.grad_sink(x);
    const auto& X = g.value(x);
    const T c = static_cast<T>(kSqrt2OverPi);
    const T a = static_cast<T>(kGeluCoeff);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T v = X[i];
      const T t = std::tanh(c * (v + a * v * v * v));
      T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
      if (corrupt) d *= T(1.05);
      dx[i] += dy[i] * d;
    }
  });
}

template <class T>
Var add_bias(Graph<T>& g, Var x, Var bias) {
  const auto& X = g.value(x);
  const auto& B = g.value(bias);
  if (B.size() != X.cols() || B.rank() != 1) {
    throw DimensionError("add_bias: bias " + shape_str(B.shape()) + " does not match " +
                         shape_str(X.shape()));
  }
  Tensor<T> out = X;
  const std::size_t n = X.cols();
  for (std::size_t r = 0; r < X.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += B[j];
  return g.record("add_bias", std::move(out), {x, bias}, [x, bias, n](Graph<T>& g, std::uint32_t self) {
    auto dy = g.out_grad(self);
    if (auto dx = g.grad_sink(x); !dx.empty())
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    if (auto db = g.grad_sink(bias); !db.empty())
      for (std::size_t i = 0; i < dy.size(); ++i) db[i % n] += dy[i];
  });
}

template <class T>
Var sum(Graph<T>& g, Var x) {
  double acc = 0;
  for (T v : g.value(x).data()) acc += v;
  Tensor<T> out(Shape{}, static_cast<T>(acc));
  return g.record("sum", std::move(out), {x}, [x](Graph<T>& g, std::uint32_t self) {
    const T d = g.out_grad(self)[0];
    for (auto& v : g.grad_sink(x)) v += d;
  });
}

template <class T>
Var mean(Graph<T>& g, Var x) {
  const std::size_t n = g.value(x).size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(g, sum(g, x), 1.0 / static_cast<double>(n));
}

template <class T>
Var reshape(Graph<T>& g, Var x, Shape shape) {
  Tensor<T> out = g.value(x);
  out.reshape(std::move(shape));
  return g.record("reshape", std::move(out), {x}, [x](Graph<T>& g, std::uint32_t self) {
    auto dy = g.out_grad(self);
    auto dx = g.grad_sink(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
  });
}

template <class T>
Var softmax_lastdim(Graph<T>& g, Var x) {
  const auto& X = g.value(x);
  require_no_nan<T>(X.data(), "softmax_lastdim");
  const std::size_t n = X.cols();
  if (n == 0) throw DimensionError("softmax_lastdim: empty last dimension");
  Tensor<T> out(X.shape());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const T* xr = X.data().data() + r * n;
    T* yr = out.data().data() + r * n;
    const T mx = *std::max_element(xr, xr + n);
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(static_cast<double>(xr[j] - mx));
    for (std::size_t j = 0; j < n; ++j)
      yr[j] = static_cast<T>(std::exp(static_cast<double>(xr[j] - mx)) / z);
  }
  return g.record("softmax", std::move(out), {x}, [x, n](Graph<T>& g, std::uint32_t self) {
    auto dy = g.out_grad(self);
    auto dx = g.grad_sink(x);
    const auto& Y = g.value(Var{self});
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      double dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[r * n + j] * Y[r * n + j];
      for (std::size_t j = 0; j < n; ++j)
        dx[r * n + j] += Y[r * n + j] * static_cast<T>(dy[r * n + j] - dot);
    }
  });
}

template <class T>
Var layer_norm(Graph<T>& g, Var x, Var gain, Var bias, double eps) {
  const auto& X = g.value(x);
  const std::size_t d = X.cols();
  if (d == 0) throw DimensionError("layer_norm: empty last dimension");
  if (g.value(gain).size() != d || g.value(bias).size() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(g.value(gain).shape()) + "/" +
                         shape_str(g.value(bias).shape()) + " do not match " +
                         shape_str(X.shape()));
  }
  if (!(eps > 0)) throw UsageError("layer_norm: eps must be positive");
  const auto& G = g.value(gain);
  const auto& B = g.value(bias);
  const std::size_t rows = X.rows();
  Tensor<T> out(X.shape());
  std::vector<T> xhat(X.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = X.data().data() + r * d;
    double mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = static_cast<T>(rs);
    for (std::size_t j = 0; j < d; ++j) {
      const T xh = static_cast<T>((xr[j] - mu) * rs);
      xhat[r * d + j] = xh;
      out[r * d + j] = xh * G[j] + B[j];
    }
  }
  return g.record(
      "layer_norm", std::move(out), {x, gain, bias},
      [x, gain, bias, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<T>& g,
                                                                              std::uint32_t self) {
        auto dy = g.out_grad(self);
        const auto& G = g.value(gain);
        if (auto dg = g.grad_sink(gain); !dg.empty())
          for (std::size_t i = 0; i < dy.size(); ++i) dg[i % d] += dy[i] * xhat[i];
        if (auto db = g.grad_sink(bias); !db.empty())
          for (std::size_t i = 0; i < dy.size(); ++i) db[i % d] += dy[i];
        auto dx = g.grad_sink(x);
        if (dx.empty()) return;
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0, m2 = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = static_cast<double>(dy[r * d + j]) * G[j];
            m1 += dxh;
            m2 += dxh * xhat[r * d + j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = static_cast<double>(dy[r * d + j]) * G[j];
            dx[r * d + j] += static_cast<T>(rstd[r] * (dxh - m1 - xhat[r * d + j] * m2));
          }
        }
      });
}

template <class T>
LossResult cross_entropy_rows(Graph<T>& g, Var logits, std::span<const std::int32_t> targets,
                              std::span<const std::uint8_t> mask) {
  const auto& L = g.value(logits);
  const std::size_t V = L.cols();
  const std::size_t n = L.rows();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(L.shape()));
  }
  if (!mask.empty() && mask.size() != n) {
    throw DimensionError("cross_entropy_rows: mask length " + std::to_string(mask.size()) +
                         " for " + std::to_string(n) + " rows");
  }
  require_no_nan<T>(L.data(), "cross_entropy_rows");
  auto counted_row = [&](std::size_t r) { return mask.empty() || mask[r] != 0; };
  std::size_t count = 0;
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (!counted_row(r)) continue;
    const std::int32_t t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw IndexError("cross_entropy_rows: target " + std::to_string(t) + " at row " +
                       std::to_string(r) + " outside [0, " + std::to_string(V) + ")");
    }
    const T* lr = L.data().data() + r * V;
    const double mx = *std::max_element(lr, lr + V);
    double z = 0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(lr[j] - mx);
    total += mx + std::log(z) - lr[t];
    ++count;
  }
  LossResult res;
  res.counted = count;
  res.empty = count == 0;
  const double value = count ? total / static_cast<double>(count) : 0.0;
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  res.value = g.record(
      "cross_entropy", Tensor<T>(Shape{}, static_cast<T>(value)), {logits},
      [logits, V, n, count, tgt = std::move(tgt), msk = std::move(msk)](Graph<T>& g,
                                                                      std::uint32_t self) {
        if (count == 0) return;
        const double d = g.out_grad(self)[0] / static_cast<double>(count);
        const auto& L = g.value(logits);
        auto dl = g.grad_sink(logits);
        for (std::size_t r = 0; r < n; ++r) {
          if (!msk.empty() && !msk[r]) continue;
          const T* lr = L.data().data() + r * V;
          const double mx = *std::max_element(lr, lr + V);
          double z = 0;
          for (std::size_t j = 0; j < V; ++j) z += std::exp(lr[j] - mx);
          for (std::size_t j = 0; j < V; ++j) {
            double p = std::exp(lr[j] - mx) / z;
            if (static_cast<std::int32_t>(j) == tgt[r]) p -= 1.0;
            dl[r * V + j] += static_cast<T>(d * p);
          }
        }
      });
  return res;
}

template <class T>
Var embedding(Graph<T>& g, Var table, std::span<const std::int32_t> ids) {
  require_rank2(g, table, "embedding");
  const auto& W = g.value(table);
  const std::size_t V = W.dim(0), d = W.dim(1);
  Tensor<T> out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::int32_t id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= V) {
      throw IndexError("embedding: id " + std::to_string(id) + " outside [0, " +
                       std::to_string(V) + ")");
    }
    std::copy_n(W.data().data() + id * d, d, out.data().data() + i * d);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return g.record("embedding", std::move(out), {table},
                  [table, d, saved = std::move(saved)](Graph<T>& g, std::uint32_t self) {
                    auto dy = g.out_grad(self);
                    auto dw = g.grad_sink(table);
                    for (std::size_t i = 0; i < saved.size(); ++i) {
                      T* row = dw.data() + saved[i] * d;
                      const T* src = dy.data() + i * d;
                      for (std::size_t j = 0; j < d; ++j) row[j] += src[j];
                    }
                  });
}

template <class T>
Var causal_attention(Graph<T>& g, Var q, Var k, Var v, std::size_t batch, std::size_t seq,
                     std::size_t heads, std::span<const std::uint8_t> key_valid) {
  require_same_shape(g, q, k, "causal_attention");
  require_same_shape(g, q, v, "causal_attention");
  const auto& Q = g.value(q);
  const std::size_t d = Q.cols();
  if (Q.rows() != batch * seq) {
    throw DimensionError("causal_attention: " + shape_str(Q.shape()) + " is not [" +
                         std::to_string(batch * seq) + ", d]");
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("causal_attention: d=" + std::to_string(d) +
                         " not divisible by heads=" + std::to_string(heads));
  }
  if (!key_valid.empty() && key_valid.size() != batch * seq) {
    throw DimensionError("causal_attention: key mask has wrong length");
  }
  const auto& K = g.value(k);
  const auto& Vv = g.value(v);
  const std::size_t dh = d / heads;
  const T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor<T> out(Q.shape());
  // probs[((b*heads + h)*seq + t)*seq + j]
  std::vector<T> probs(batch * heads * seq * seq, T{0});
  std::vector<double> scores(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < seq; ++t) {
        const T* qr = Q.data().data() + (b * seq + t) * d + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t j = 0; j <= t; ++j) {
          if (!key_valid.empty() && !key_valid[b * seq + j]) continue;
          const T* kr = K.data().data() + (b * seq + j) * d + h * dh;
          T s{0};
          for (std::size_t c = 0; c < dh; ++c) s += qr[c] * kr[c];
          scores[j] = static_cast<double>(s * sc);
          mx = std::max(mx, scores[j]);
          any = true;
        }
        if (!any) continue;
        double z = 0;
        T* pr = probs.data() + ((b * heads + h) * seq + t) * seq;
        for (std::size_t j = 0; j <= t; ++j) {
          if (!key_valid.empty() && !key_valid[b * seq + j]) continue;
          const double e = std::exp(scores[j] - mx);
          pr[j] = static_cast<T>(e);
          z += e;
        }
        T* orow = out.data().data() + (b * seq + t) * d + h * dh;
        for (std::size_t j = 0; j <= t; ++j) {
          if (pr[j] == T{0}) continue;
          pr[j] = static_cast<T>(pr[j] / z);
          const T* vr = Vv.data().data() + (b * seq + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) orow[c] += pr[j] * vr[c];
        }
      }
    }
  }
  return g.record(
      "causal_attention", std::move(out), {q, k, v},
      [q, k, v, batch, seq, heads, d, dh, sc, probs = std::move(probs)](Graph<T>& g,
                                                                      std::uint32_t self) {
        auto dout = g.out_grad(self);
        const auto& Q = g.value(q);
        const auto& K = g.value(k);
        const auto& Vv = g.value(v);
        auto dq = g.grad_sink(q);
        auto dk = g.grad_sink(k);
        auto dv = g.grad_sink(v);
        std::vector<T> dp(seq);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t t = 0; t < seq; ++t) {
              const T* pr = probs.data() + ((b * heads + h) * seq + t) * seq;
              const T* dor = dout.data() + (b * seq + t) * d + h * dh;
              double dot = 0;
              for (std::size_t j = 0; j <= t; ++j) {
                if (pr[j] == T{0}) {
                  dp[j] = T{0};
                  continue;
                }
                const T* vr = Vv.data().data() + (b * seq + j) * d + h * dh;
                T s{0};
                for (std::size_t c = 0; c < dh; ++c) s += dor[c] * vr[c];
                dp[j] = s;
                dot += static_cast<double>(pr[j]) * s;
                if (!dv.empty()) {
                  T* dvr = dv.data() + (b * seq + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dvr[c] += pr[j] * dor[c];
                }
              }
              const T* qr = Q.data().data() + (b * seq + t) * d + h * dh;
              for (std::size_t j = 0; j <= t; ++j) {
                if (pr[j] == T{0}) continue;
                const T ds = static_cast<T>(pr[j] * (dp[j] - dot)) * sc;
                const T* kr = K.data().data() + (b * seq + j) * d + h * dh;
                if (!dq.empty()) {
                  T* dqr = dq.data() + (b * seq + t) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dqr[c] += ds * kr[c];
                }
                if (!dk.empty()) {
                  T* dkr = dk.data() + (b * seq + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dkr[c] += ds * qr[c];
                }
              }
            }
          }
        }
      });
}

template <class T>
Var pool_rows(Graph<T>& g, Var x, std::size_t batch, std::size_t seq,
              std::span<const std::uint8_t> valid, Pooling method) {
  const auto& X = g.value(x);
  const std::size_t d = X.cols();
  if (X.rows() != batch * seq) {
    throw DimensionError("pool_rows: " + shape_str(X.shape()) + " is not [" +
                         std::to_string(batch * seq) + ", d]");
  }
  if (!valid.empty() && valid.size() != batch * seq) {
    throw DimensionError("pool_rows: mask has wrong length");
  }
  auto ok = [&](std::size_t b, std::size_t t) { return valid.empty() || valid[b * seq + t]; };
  Tensor<T> out({batch, d});
  // For max: source row per output element. For last_token: source row per batch row.
  std::vector<std::uint32_t> src;
  std::vector<T> inv_count(batch, T{0});
  if (method == Pooling::max) src.assign(batch * d, 0);
  if (method == Pooling::last_token) src.assign(batch, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t count = 0;
    for (std::size_t t = 0; t < seq; ++t) count += ok(b, t) ? 1 : 0;
    if (count == 0) {
      throw DataError("pool: row " + std::to_string(b) + " has no valid positions");
    }
    T* orow = out.data().data() + b * d;
    switch (method) {
      case Pooling::mean: {
        std::vector<double> acc(d, 0.0);
        for (std::size_t t = 0; t < seq; ++t) {
          if (!ok(b, t)) continue;
          const T* xr = X.data().data() + (b * seq + t) * d;
          for (std::size_t c = 0; c < d; ++c) acc[c] += xr[c];
        }
        for (std::size_t c = 0; c < d; ++c) orow[c] = static_cast<T>(acc[c] / static_cast<double>(count));
        inv_count[b] = static_cast<T>(1.0 / static_cast<double>(count));
        break;
      }
      case Pooling::max: {
        bool first = true;
        for (std::size_t t = 0; t < seq; ++t) {
          if (!ok(b, t)) continue;
          const T* xr = X.data().data() + (b * seq + t) * d;
          for (std::size_t c = 0; c < d; ++c) {
            if (first || xr[c] > orow[c]) {
              orow[c] = xr[c];
              src[b * d + c] = static_cast<std::uint32_t>(b * seq + t);
            }
          }
          first = false;
        }
        break;
      }
      case Pooling::last_token: {
        std::size_t last = 0;
        for (std::size_t t = 0; t < seq; ++t)
          if (ok(b, t)) last = t;
        src[b] = static_cast<std::uint32_t>(b * seq + last);
        std::copy_n(X.data().data() + (b * seq + last) * d, d, orow);
        break;
      }
    }
  }
  std::vector<std::uint8_t> mask(valid.begin(), valid.end());
  return g.record("pool", std::move(out), {x},
                  [x, batch, seq, d, method, src = std::move(src), inv_count = std::move(inv_count),
                   mask = std::move(mask)](Graph<T>& g, std::uint32_t self) {
                    auto dy = g.out_grad(self);
                    auto dx = g.grad_sink(x);
                    for (std::size_t b = 0; b < batch; ++b) {
                      const T* dyr = dy.data() + b * d;
                      if (method == Pooling::mean) {
                        for (std::size_t t = 0; t < seq; ++t) {
                          if (!mask.empty() && !mask[b * seq + t]) continue;
                          T* dxr = dx.data() + (b * seq + t) * d;
                          for (std::size_t c = 0; c < d; ++c) dxr[c] += dyr[c] * inv_count[b];
                        }
                      } else if (method == Pooling::max) {
                        for (std::size_t c = 0; c < d; ++c) dx[src[b * d + c] * d + c] += dyr[c];
                      } else {
                        T* dxr = dx.data() + src[b] * d;
                        for (std::size_t c = 0; c < d; ++c) dxr[c] += dyr[c];
                      }
                    }
                  });
}

template <class T>
Var l2_normalize_rows(Graph<T>& g, Var x) {
  const auto& X = g.value(x);
  const std::size_t d = X.cols();
  Tensor<T> out(X.shape());
  std::vector<T> norms(X.rows());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += static_cast<double>(X[r * d + c]) * X[r * d + c];
    const double nrm = std::sqrt(s);
    if (!(nrm > 0)) {
      throw NumericError("l2_normalize_rows: row " + std::to_string(r) + " has zero norm");
    }
    norms[r] = static_cast<T>(nrm);
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = static_cast<T>(X[r * d + c] / nrm);
  }
  return g.record("l2_normalize", std::move(out), {x},
                  [x, d, norms = std::move(norms)](Graph<T>& g, std::uint32_t self) {
                    auto dy = g.out_grad(self);
                    auto dx = g.grad_sink(x);
                    const auto& Y = g.value(Var{self});
                    for (std::size_t r = 0; r < norms.size(); ++r) {
                      double dot = 0;
                      for (std::size_t c = 0; c < d; ++c) dot += dy[r * d + c] * Y[r * d + c];
                      for (std::size_t c = 0; c < d; ++c)
                        dx[r * d + c] += static_cast<T>((dy[r * d + c] - Y[r * d + c] * dot) / norms[r]);
                    }
                  });
}

#define AFP_INSTANTIATE_OPS(T)                                                                   \
  template Var matmul<T>(Graph<T>&, Var, Var);                                                   \
  template Var transpose<T>(Graph<T>&, Var);                                                     \
  template Var add<T>(Graph<T>&, Var, Var);                                                      \
  template Var sub<T>(Graph<T>&, Var, Var);                                                      \
  template Var mul<T>(Graph<T>&, Var, Var);                                                      \
  template Var scale<T>(Graph<T>&, Var, double);                                                 \
  template Var gelu<T>(Graph<T>&, Var);                                                          \
  template Var add_bias<T>(Graph<T>&, Var, Var);                                                 \
  template Var sum<T>(Graph<T>&, Var);                                                           \
  template Var mean<T>(Graph<T>&, Var);                                                          \
  template Var reshape<T>(Graph<T>&, Var, Shape);                                                \
  template Var softmax_lastdim<T>(Graph<T>&, Var);                                               \
  template Var layer_norm<T>(Graph<T>&, Var, Var, Var, double);                                  \
  template LossResult cross_entropy_rows<T>(Graph<T>&, Var, std::span<const std::int32_t>,       \
                                            std::span<const std::uint8_t>);                      \
  template Var embedding<T>(Graph<T>&, Var, std::span<const std::int32_t>);                      \
  template Var causal_attention<T>(Graph<T>&, Var, Var, Var, std::size_t, std::size_t,           \
                                   std::size_t, std::span<const std::uint8_t>);                  \
  template Var pool_rows<T>(Graph<T>&, Var, std::size_t, std::size_t,                            \
                            std::span<const std::uint8_t>, Pooling);                             \
  template Var l2_normalize_rows<T>(Graph<T>&, Var);

AFP_INSTANTIATE_OPS(float)
AFP_INSTANTIATE_OPS(double)

}  // namespace afp::num
