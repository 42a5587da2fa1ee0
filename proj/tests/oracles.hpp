// Plain-loop reference implementations used only by the tests. They share
// no code with the library beyond the parameter container.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "afp/model.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat to_mat(const afp::num::Tensor<double>& t) {
  Mat m(t.rows(), Vec(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline Vec normalized(const Vec& a) {
  Vec out = a;
  const double n = norm(a);
  for (auto& x : out) x /= n;
  return out;
}

inline double cosine(const Vec& a, const Vec& b) { return dot(a, b) / (norm(a) * norm(b)); }

/// mean_i -log( e^{cos(h_i, h+_i)/tau} / sum_j e^{cos(h_i, h+_j)/tau} )
inline double mcl(const Mat& h, const Mat& hp, double tau) {
  const std::size_t n = h.size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(cosine(h[i], hp[j]) / tau);
    total += -std::log(std::exp(cosine(h[i], hp[i]) / tau) / denom);
  }
  return total / static_cast<double>(n);
}

/// Same quantity with the log-sum-exp shift; needed at small tau.
inline double mcl_stable(const Mat& h, const Mat& hp, double tau) {
  const std::size_t n = h.size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Vec s(n);
    for (std::size_t j = 0; j < n; ++j) s[j] = cosine(h[i], hp[j]) / tau;
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0;
    for (double v : s) z += std::exp(v - mx);
    total += (mx + std::log(z)) - s[i];
  }
  return total / static_cast<double>(n);
}

inline double sqdist(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline double alignment(const Mat& x, const Mat& y) {
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += sqdist(normalized(x[i]), normalized(y[i]));
  return s / static_cast<double>(x.size());
}

inline double uniformity(const Mat& x) {
  double s = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (i == j) continue;
      s += std::exp(-2.0 * sqdist(normalized(x[i]), normalized(x[j])));
      ++count;
    }
  }
  return std::log(s / static_cast<double>(count));
}

inline Vec log_softmax(const Vec& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0;
  for (double v : z) s += std::exp(v - mx);
  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - mx - std::log(s);
  return out;
}

namespace detail {

inline Mat linear(const Mat& x, const afp::num::Tensor<double>& w, const afp::num::Tensor<double>& b) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  Mat y(x.size(), Vec(out));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += x[r][i] * w.at(i, o);
      y[r][o] = s;
    }
  return y;
}

inline Mat layer_norm(const Mat& x, const afp::num::Tensor<double>& g, const afp::num::Tensor<double>& b) {
  Mat y = x;
  for (std::size_t r = 0; r < x.size(); ++r) {
    const double n = static_cast<double>(x[r].size());
    double mu = 0, var = 0;
    for (double v : x[r]) mu += v;
    mu /= n;
    for (double v : x[r]) var += (v - mu) * (v - mu);
    var /= n;
    for (std::size_t c = 0; c < x[r].size(); ++c) y[r][c] = (x[r][c] - mu) / std::sqrt(var + 1e-5) * g[c] + b[c];
  }
  return y;
}

inline double gelu(double v) {
  return 0.5 * v * (1 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
}

}  // namespace detail

/// Hidden states (embedding output, then each block) and logits of one
/// unpadded sequence, computed position by position.
struct ForwardTrace {
  std::vector<Mat> hidden;
  Mat logits;
};

inline ForwardTrace forward(const afp::ModelParams<double>& p, const std::vector<std::int32_t>& tokens) {
  using afp::model::LayerSlot;
  const auto& cfg = p.config;
  const std::size_t T = tokens.size(), d = cfg.d_model, H = cfg.n_heads, dh = d / H;
  Mat x(T, Vec(d));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < d; ++c)
      x[t][c] = p.tensors[afp::model::kTokEmb].value.at(tokens[t], c) + p.tensors[afp::model::kPosEmb].value.at(t, c);
  ForwardTrace tr;
  tr.hidden.push_back(x);
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto P = [&](LayerSlot s) -> const afp::num::Tensor<double>& {
      return p.tensors[afp::model::layer_index(l, s)].value;
    };
    const Mat a = detail::layer_norm(x, P(LayerSlot::ln1_gain), P(LayerSlot::ln1_bias));
    const Mat q = detail::linear(a, P(LayerSlot::wq), P(LayerSlot::bq));
    const Mat k = detail::linear(a, P(LayerSlot::wk), P(LayerSlot::bk));
    const Mat v = detail::linear(a, P(LayerSlot::wv), P(LayerSlot::bv));
    Mat att(T, Vec(d, 0.0));
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t t = 0; t < T; ++t) {
        Vec w(t + 1);
        for (std::size_t j = 0; j <= t; ++j) {
          double s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += q[t][h * dh + c] * k[j][h * dh + c];
          w[j] = s / std::sqrt(static_cast<double>(dh));
        }
        const Vec lw = log_softmax(w);
        for (std::size_t j = 0; j <= t; ++j)
          for (std::size_t c = 0; c < dh; ++c) att[t][h * dh + c] += std::exp(lw[j]) * v[j][h * dh + c];
      }
    }
    const Mat o = detail::linear(att, P(LayerSlot::wo), P(LayerSlot::bo));
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < d; ++c) x[t][c] += o[t][c];
    const Mat m = detail::layer_norm(x, P(LayerSlot::ln2_gain), P(LayerSlot::ln2_bias));
    Mat f = detail::linear(m, P(LayerSlot::w1), P(LayerSlot::b1));
    for (auto& row : f)
      for (auto& v2 : row) v2 = detail::gelu(v2);
    const Mat f2 = detail::linear(f, P(LayerSlot::w2), P(LayerSlot::b2));
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < d; ++c) x[t][c] += f2[t][c];
    tr.hidden.push_back(x);
  }
  const Mat fx = detail::layer_norm(x, p.tensors[afp::model::lnf_gain_index(cfg)].value,
                                    p.tensors[afp::model::lnf_bias_index(cfg)].value);
  const auto& head = p.tensors[afp::model::head_index(cfg)].value;
  tr.logits.assign(T, Vec(cfg.vocab_size));
  for (std::size_t t = 0; t < T; ++t)
    for (int vtok = 0; vtok < cfg.vocab_size; ++vtok) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += fx[t][c] * head.at(c, vtok);
      tr.logits[t][vtok] = s;
    }
  return tr;
}

/// Mean NLL over the positions selected by loss_mask of each sequence.
inline double sequence_nll(const afp::ModelParams<double>& p, const std::vector<std::vector<std::int32_t>>& seqs,
                           const std::vector<std::vector<std::uint8_t>>& masks) {
  double total = 0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const ForwardTrace tr = forward(p, seqs[s]);
    for (std::size_t t = 0; t + 1 < seqs[s].size(); ++t) {
      if (!masks[s][t]) continue;
      total += -log_softmax(tr.logits[t])[seqs[s][t + 1]];
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace oracle
