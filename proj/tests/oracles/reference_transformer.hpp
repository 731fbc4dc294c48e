#pragma once

// Straight-loop forward pass over std::vector, independent of the Eigen
// implementation. Only the parameter storage (named slots) is shared.

#include <cmath>
#include <vector>

#include "nfgen/model.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

struct ReferenceOutput {
  Matrix logits;  // (T + 1) x F*N, row 0 from the begin-of-sequence step
  Matrix hidden;  // (T + 1) x d
};

inline Matrix zeros(int r, int c) { return Matrix(static_cast<std::size_t>(r), std::vector<double>(static_cast<std::size_t>(c), 0.0)); }

class ReferenceTransformer {
 public:
  explicit ReferenceTransformer(const nfgen::Transformer<double>& m) : m_(m), cfg_(m.config()) {}

  double p(const nfgen::TensorSlot& s, int r, int c) const {
    return m_.params()[static_cast<Eigen::Index>(s.offset + static_cast<std::size_t>(r) * s.cols + c)];
  }

  // Runs the first `steps` minutes of seq.
  ReferenceOutput run(const nfgen::SequenceView& seq, int steps) const {
    const auto& L = m_.layout();
    const int d = cfg_.hidden;
    const int P = steps + 1;
    Matrix x = zeros(P, d);
    for (int i = 0; i < P; ++i) {
      for (int j = 0; j < d; ++j) {
        x[i][j] = p(L.node_emb, seq.node, j) + p(L.customer_emb, seq.customer, j) + p(L.pos_emb, i, j);
      }
    }
    for (int j = 0; j < d; ++j) x[0][j] += p(L.bos, 0, j);
    for (int t = 0; t < steps; ++t) {
      std::vector<double> onehot(static_cast<std::size_t>(cfg_.input_width()), 0.0);
      auto toks = seq.step(t);
      for (int f = 0; f < cfg_.features; ++f) onehot[static_cast<std::size_t>(f * cfg_.bins + toks[f])] = 1.0;
      const std::int64_t m = seq.start_minute + t;
      const std::int64_t minute = ((m % 60) + 60) % 60;
      const std::int64_t hour = (((m / 60) % 24) + 24) % 24;
      const std::int64_t weekday = ((m / 1440) + 3) % 7;
      const int fn = cfg_.features * cfg_.bins;
      onehot[static_cast<std::size_t>(fn + minute)] = 1.0;
      onehot[static_cast<std::size_t>(fn + 60 + hour)] = 1.0;
      onehot[static_cast<std::size_t>(fn + 84 + weekday)] = 1.0;
      for (int j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int r = 0; r < cfg_.input_width(); ++r) acc += onehot[static_cast<std::size_t>(r)] * p(L.input_proj, r, j);
        x[t + 1][j] += acc;
      }
    }

    for (const auto& b : L.blocks) {
      Matrix a = norm(x, b.ln1_gain, b.ln1_bias);
      Matrix qkv = affine(a, b.qkv_weight, b.qkv_bias);
      const int H = cfg_.heads;
      const int dh = d / H;
      Matrix ctx = zeros(P, d);
      for (int h = 0; h < H; ++h) {
        for (int i = 0; i < P; ++i) {
          std::vector<double> w(static_cast<std::size_t>(i + 1));
          double mx = -1e300;
          for (int j = 0; j <= i; ++j) {
            double s = 0.0;
            for (int e = 0; e < dh; ++e) s += qkv[i][h * dh + e] * qkv[j][d + h * dh + e];
            w[j] = s / std::sqrt(static_cast<double>(dh));
            mx = std::max(mx, w[j]);
          }
          double z = 0.0;
          for (double& v : w) z += (v = std::exp(v - mx));
          for (int j = 0; j <= i; ++j) {
            for (int e = 0; e < dh; ++e) ctx[i][h * dh + e] += w[j] / z * qkv[j][2 * d + h * dh + e];
          }
        }
      }
      Matrix y = affine(ctx, b.attn_out_weight, b.attn_out_bias);
      for (int i = 0; i < P; ++i)
        for (int j = 0; j < d; ++j) x[i][j] += y[i][j];
      Matrix bn = norm(x, b.ln2_gain, b.ln2_bias);
      Matrix h1 = affine(bn, b.fc1_weight, b.fc1_bias);
      for (auto& row : h1)
        for (double& v : row) v = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
      Matrix f = affine(h1, b.fc2_weight, b.fc2_bias);
      for (int i = 0; i < P; ++i)
        for (int j = 0; j < d; ++j) x[i][j] += f[i][j];
    }
    ReferenceOutput out;
    out.hidden = norm(x, L.final_gain, L.final_bias);
    out.logits = affine(out.hidden, L.head_weight, L.head_bias);
    return out;
  }

 private:
  Matrix norm(const Matrix& x, const nfgen::TensorSlot& gain, const nfgen::TensorSlot& bias) const {
    Matrix y = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double n = static_cast<double>(x[i].size());
      double mean = 0.0;
      for (double v : x[i]) mean += v;
      mean /= n;
      double var = 0.0;
      for (double v : x[i]) var += (v - mean) * (v - mean);
      var /= n;
      for (std::size_t j = 0; j < x[i].size(); ++j) {
        y[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * p(gain, 0, static_cast<int>(j)) + p(bias, 0, static_cast<int>(j));
      }
    }
    return y;
  }

  Matrix affine(const Matrix& x, const nfgen::TensorSlot& w, const nfgen::TensorSlot& b) const {
    Matrix y = zeros(static_cast<int>(x.size()), w.cols);
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (int j = 0; j < w.cols; ++j) {
        double acc = p(b, 0, j);
        for (int r = 0; r < w.rows; ++r) acc += x[i][static_cast<std::size_t>(r)] * p(w, r, j);
        y[i][static_cast<std::size_t>(j)] = acc;
      }
    }
    return y;
  }

  const nfgen::Transformer<double>& m_;
  nfgen::ModelConfig cfg_;
};

}  // namespace oracle
