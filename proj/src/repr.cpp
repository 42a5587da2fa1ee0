#include "afp/repr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "afp/rng.hpp"

namespace afp::repr {

namespace {

Matrix normalized_rows(const Matrix& m) {
  Matrix out = m;
  const std::size_t d = m.cols();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += m[r * d + c] * m[r * d + c];
    const double n = std::sqrt(s);
    if (!(n > 0)) throw NumericError("cannot normalize zero vector at row " + std::to_string(r));
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] /= n;
  }
  return out;
}

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0;
  for (std::size_t c = 0; c < d; ++c) {
    const double t = a[c] - b[c];
    s += t * t;
  }
  return s;
}

void require_matrix(const Matrix& m, const char* what) {
  if (m.rank() != 2) throw DimensionError(std::string(what) + ": expected a matrix");
}

}  // namespace

template <class T>
PooledBatch pool(const num::Tensor<T>& hidden, std::size_t batch, std::size_t seq,
                 std::span<const std::uint8_t> pad_mask, num::Pooling method, int layer) {
  if (layer < 0) throw UsageError("pool: negative layer");
  num::Graph<T> g;
  num::Var h = g.constant_ref(hidden);
  if (hidden.rank() == 3) h = num::reshape(g, h, {batch * seq, hidden.dim(2)});
  num::Var p = num::pool_rows(g, h, batch, seq, pad_mask, method);
  PooledBatch out;
  out.vectors = g.value(p).template cast<double>();
  out.method = method;
  out.layer = layer;
  if (!num::all_finite<double>(out.vectors.data())) throw NumericError("pool: non-finite vector");
  return out;
}

template <class T>
PooledBatch encode(const ModelParams<T>& params, const TokenBatch& batch, int layer,
                   num::Pooling method) {
  if (layer < 0 || layer > params.config.n_layers) {
    throw UsageError("layer " + std::to_string(layer) + " outside [0, " +
                     std::to_string(params.config.n_layers) + "]");
  }
  num::Graph<T> g;
  BoundParams bp = bind_const(g, params);
  ForwardResult fr = forward(g, bp, params.config, batch, ForwardOptions{layer});
  return pool(g.value(fr.hidden_states.back()), batch.batch, batch.seq, batch.pad_mask, method,
              layer);
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw DimensionError("cosine: vectors differ in length");
  double uv = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (!(uu > 0) || !(vv > 0)) throw NumericError("cosine: zero vector");
  return std::clamp(uv / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

double alignment_metric(const Matrix& x, const Matrix& x_pos) {
  require_matrix(x, "alignment_metric");
  require_matrix(x_pos, "alignment_metric");
  if (x.rows() == 0) throw UsageError("alignment_metric: no pairs");
  if (x.shape() != x_pos.shape()) {
    throw DimensionError("alignment_metric: " + num::shape_str(x.shape()) + " vs " +
                         num::shape_str(x_pos.shape()));
  }
  const Matrix a = normalized_rows(x);
  const Matrix b = normalized_rows(x_pos);
  const std::size_t d = a.cols();
  double s = 0;
  for (std::size_t r = 0; r < a.rows(); ++r)
    s += sq_dist(a.data().data() + r * d, b.data().data() + r * d, d);
  return s / static_cast<double>(a.rows());
}

double uniformity_metric(const Matrix& points) {
  require_matrix(points, "uniformity_metric");
  const std::size_t n = points.rows();
  if (n < 2) throw UsageError("uniformity_metric: needs at least 2 points");
  const Matrix p = normalized_rows(points);
  const std::size_t d = p.cols();
  // Terms are <= 0 and the self-pairs are excluded, so the maximum term
  // shifts the exponentials into [0, 1].
  std::vector<double> terms;
  terms.reserve(n * (n - 1) / 2);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double t = -2.0 * sq_dist(p.data().data() + i * d, p.data().data() + j * d, d);
      terms.push_back(t);
      mx = std::max(mx, t);
    }
  }
  // Ordered pairs count each unordered pair twice; the mean is unchanged.
  double s = 0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s / static_cast<double>(terms.size()));
}

double retrieval_acc_at_1(const Matrix& src, const Matrix& tgt) {
  require_matrix(src, "retrieval_acc_at_1");
  require_matrix(tgt, "retrieval_acc_at_1");
  if (src.rows() != tgt.rows() || src.cols() != tgt.cols()) {
    throw UsageError("retrieval_acc_at_1: batch shapes differ " + num::shape_str(src.shape()) +
                     " vs " + num::shape_str(tgt.shape()));
  }
  const std::size_t n = src.rows();
  if (n == 0) throw UsageError("retrieval_acc_at_1: empty batch");
  const Matrix a = normalized_rows(src);
  const Matrix b = normalized_rows(tgt);
  const std::size_t d = a.cols();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += a[i * d + c] * b[j * d + c];
      if (s > best_sim) {
        best_sim = s;
        best = j;
      }
    }
    hits += best == i ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

double retrieval_acc_at_1(const PooledBatch& src, const PooledBatch& tgt) {
  return retrieval_acc_at_1(src.vectors, tgt.vectors);
}

namespace {

struct EigenPair {
  std::vector<double> vec;
  double value = 0;
  int iterations = 0;
};

std::vector<double> apply(const std::vector<double>& C, std::size_t d, const std::vector<double>& v) {
  std::vector<double> w(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += C[i * d + j] * v[j];
    w[i] = s;
  }
  return w;
}

double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void orthogonalize(std::vector<double>& v, const std::vector<double>& against) {
  double dot = 0;
  for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * against[i];
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * against[i];
}

EigenPair power_iteration(const std::vector<double>& C, std::size_t d, double scale,
                          const std::vector<double>* ortho, std::uint64_t seed,
                          const PcaOptions& opt) {
  Pcg32 rng(seed, 7);
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  if (ortho) orthogonalize(v, *ortho);
  double n = norm(v);
  for (auto& x : v) x /= n;
  const double tol = opt.tolerance * std::max(scale, std::numeric_limits<double>::min());
  double residual = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= opt.max_iterations; ++it) {
    std::vector<double> w = apply(C, d, v);
    if (ortho) orthogonalize(w, *ortho);
    double lambda = 0;
    for (std::size_t i = 0; i < d; ++i) lambda += v[i] * w[i];
    double r2 = 0;
    for (std::size_t i = 0; i < d; ++i) r2 += (w[i] - lambda * v[i]) * (w[i] - lambda * v[i]);
    residual = std::sqrt(r2);
    if (residual <= tol) return {v, lambda, it};
    const double wn = norm(w);
    for (std::size_t i = 0; i < d; ++i) v[i] = w[i] / wn;
  }
  std::ostringstream os;
  os << "pca2: power iteration did not converge in " << opt.max_iterations
     << " iterations (residual " << residual << ", tolerance " << tol << ")";
  throw NumericError(os.str());
}

void orient(std::vector<double>& v) {
  const double n = norm(v);
  for (double x : v) {
    if (std::abs(x) > 1e-12 * n) {
      if (x < 0)
        for (auto& y : v) y = -y;
      return;
    }
  }
}

}  // namespace

Pca2 pca2(const Matrix& vectors, PcaOptions options) {
  require_matrix(vectors, "pca2");
  const std::size_t n = vectors.rows(), d = vectors.cols();
  if (n < 3) throw UsageError("pca2: needs at least 3 points");
  if (d < 2) throw DimensionError("pca2: needs at least 2 dimensions");
  std::vector<double> mu(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) mu[c] += vectors[r * d + c];
  for (auto& m : mu) m /= static_cast<double>(n);
  Matrix centered = vectors;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) centered[r * d + c] -= mu[c];
  std::vector<double> C(d * d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* x = centered.data().data() + r * d;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) C[i * d + j] += x[i] * x[j];
  }
  for (auto& c : C) c /= static_cast<double>(n);
  double trace = 0;
  for (std::size_t i = 0; i < d; ++i) trace += C[i * d + i];

  Pca2 out;
  out.total_variance = trace;
  out.components = Matrix({2, d});
  out.coords = Matrix({n, 2});
  if (!(trace > 0)) {
    out.components[0] = 1.0;
    out.components[d + 1] = 1.0;
    return out;
  }
  EigenPair first = power_iteration(C, d, trace, nullptr, 0x5eed, options);
  orient(first.vec);
  std::vector<double> deflated = C;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) deflated[i * d + j] -= first.value * first.vec[i] * first.vec[j];
  EigenPair second = power_iteration(deflated, d, trace, &first.vec, 0x5eed + 1, options);
  orthogonalize(second.vec, first.vec);
  const double n2 = norm(second.vec);
  for (auto& x : second.vec) x /= n2;
  orient(second.vec);

  out.eigenvalues = {first.value, second.value};
  out.iterations = {first.iterations, second.iterations};
  for (std::size_t c = 0; c < d; ++c) {
    out.components[c] = first.vec[c];
    out.components[d + c] = second.vec[c];
  }
  for (std::size_t r = 0; r < n; ++r) {
    double a = 0, b = 0;
    for (std::size_t c = 0; c < d; ++c) {
      a += centered[r * d + c] * first.vec[c];
      b += centered[r * d + c] * second.vec[c];
    }
    out.coords[r * 2] = a;
    out.coords[r * 2 + 1] = b;
  }
  return out;
}

Matrix rows_of(const Matrix& m, std::size_t begin, std::size_t end) {
  const std::size_t d = m.cols();
  std::vector<double> v(m.data().begin() + static_cast<std::ptrdiff_t>(begin * d),
                        m.data().begin() + static_cast<std::ptrdiff_t>(end * d));
  return Matrix({end - begin, d}, std::move(v));
}

Matrix stack_rows(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("stack_rows: column counts differ");
  std::vector<double> v(a.data().begin(), a.data().end());
  v.insert(v.end(), b.data().begin(), b.data().end());
  return Matrix({a.rows() + b.rows(), a.cols()}, std::move(v));
}

template PooledBatch pool<float>(const num::Tensor<float>&, std::size_t, std::size_t,
                                 std::span<const std::uint8_t>, num::Pooling, int);
template PooledBatch pool<double>(const num::Tensor<double>&, std::size_t, std::size_t,
                                  std::span<const std::uint8_t>, num::Pooling, int);
template PooledBatch encode<float>(const ModelParams<float>&, const TokenBatch&, int, num::Pooling);
template PooledBatch encode<double>(const ModelParams<double>&, const TokenBatch&, int, num::Pooling);

}  // namespace afp::repr
