#pragma once

// Straight-loop transformer used as an oracle for the Eigen implementation.
// Shares only the parameter tensors with the library.

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "dpmusic/model.hpp"

namespace dpmusic::testing {

using Vec = std::vector<double>;
using Rows = std::vector<Vec>;
using Cells = std::array<int, kNumFields>;

inline Vec ref_affine(const Vec& x, const Matrix& w, const Matrix& b) {
  Vec y(static_cast<std::size_t>(w.cols()));
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    double acc = b(0, j);
    for (Eigen::Index i = 0; i < w.rows(); ++i) acc += x[static_cast<std::size_t>(i)] * w(i, j);
    y[static_cast<std::size_t>(j)] = acc;
  }
  return y;
}

inline Vec ref_norm(const Vec& x, const Matrix& gain, const Matrix& bias) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * gain(0, static_cast<Eigen::Index>(i)) +
           bias(0, static_cast<Eigen::Index>(i));
  }
  return y;
}

inline double ref_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Logits per input row: out[s][d] has V_d entries.
inline std::vector<std::array<Vec, kNumFields>> reference_logits(const Model& model,
                                                                 const std::vector<Cells>& rows) {
  const auto& cfg = model.config();
  const auto& P = model.params();
  const std::size_t T = rows.size();
  const auto D = static_cast<std::size_t>(cfg.d_model);
  const auto H = static_cast<std::size_t>(cfg.heads);
  const std::size_t hd = D / H;

  Rows x(T, Vec(D, 0.0));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < D; ++c) {
      double v = P.position(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c));
      for (std::size_t d = 0; d < kNumFields; ++d) {
        v += P.embed[d](rows[t][d], static_cast<Eigen::Index>(c));
      }
      x[t][c] = v;
    }
  }

  for (const auto& L : P.layers) {
    Rows q(T), k(T), v(T);
    for (std::size_t t = 0; t < T; ++t) {
      const Vec h = ref_norm(x[t], L.ln1_gain, L.ln1_bias);
      q[t] = ref_affine(h, L.wq, L.bq);
      k[t] = ref_affine(h, L.wk, L.bk);
      v[t] = ref_affine(h, L.wv, L.bv);
    }
    for (std::size_t t = 0; t < T; ++t) {
      Vec attn(D, 0.0);
      for (std::size_t h = 0; h < H; ++h) {
        Vec score(t + 1);
        double mx = -1e300;
        for (std::size_t j = 0; j <= t; ++j) {
          double s = 0.0;
          for (std::size_t c = h * hd; c < (h + 1) * hd; ++c) s += q[t][c] * k[j][c];
          score[j] = s / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, score[j]);
        }
        double z = 0.0;
        for (double& s : score) {
          s = std::exp(s - mx);
          z += s;
        }
        for (std::size_t j = 0; j <= t; ++j) {
          for (std::size_t c = h * hd; c < (h + 1) * hd; ++c) attn[c] += score[j] / z * v[j][c];
        }
      }
      const Vec a = ref_affine(attn, L.wo, L.bo);
      for (std::size_t c = 0; c < D; ++c) x[t][c] += a[c];
    }
    for (std::size_t t = 0; t < T; ++t) {
      Vec pre = ref_affine(ref_norm(x[t], L.ln2_gain, L.ln2_bias), L.w1, L.b1);
      for (double& p : pre) p = ref_gelu(p);
      const Vec f = ref_affine(pre, L.w2, L.b2);
      for (std::size_t c = 0; c < D; ++c) x[t][c] += f[c];
    }
  }

  std::vector<std::array<Vec, kNumFields>> out(T);
  for (std::size_t t = 0; t < T; ++t) {
    const Vec h = ref_norm(x[t], P.final_gain, P.final_bias);
    for (std::size_t d = 0; d < kNumFields; ++d) {
      const int V = cfg.vocab.size(d);
      Vec z(static_cast<std::size_t>(V));
      for (int j = 0; j < V; ++j) {
        double acc = P.head_b[d](0, j);
        for (std::size_t c = 0; c < D; ++c) {
          const double w = model.tied() ? P.embed[d](j, static_cast<Eigen::Index>(c))
                                        : P.head_w[d](static_cast<Eigen::Index>(c), j);
          acc += h[c] * w;
        }
        z[static_cast<std::size_t>(j)] = acc;
      }
      out[t][d] = std::move(z);
    }
  }
  return out;
}

inline double ref_nll(const Vec& z, int target) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  return mx + std::log(s) - z[static_cast<std::size_t>(target)];
}

struct ReferenceLoss {
  double mean = 0.0;
  std::array<double, kNumFields> field_mean{};
};

// Parallel-heads objective straight from a token list: token s predicts
// every field of token s + 1, no grid involved.
inline ReferenceLoss parallel_baseline_loss(const Model& model,
                                            const std::vector<CompoundToken>& tokens) {
  std::vector<Cells> inputs;
  for (std::size_t s = 0; s + 1 < tokens.size(); ++s) inputs.push_back(tokens[s].values);
  const auto logits = reference_logits(model, inputs);
  ReferenceLoss r;
  double total = 0.0;
  for (std::size_t d = 0; d < kNumFields; ++d) {
    double sum = 0.0;
    for (std::size_t s = 0; s < inputs.size(); ++s) sum += ref_nll(logits[s][d], tokens[s + 1][d]);
    r.field_mean[d] = sum / static_cast<double>(inputs.size());
    total += sum;
  }
  r.mean = total / static_cast<double>(inputs.size() * kNumFields);
  return r;
}

}  // namespace dpmusic::testing
