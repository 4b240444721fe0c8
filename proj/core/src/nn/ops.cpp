#include "paln/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "paln/error.hpp"
#include "paln/nn/functional.hpp"

namespace paln::nn {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

MatrixMap as_matrix(Tensor& t) { return MatrixMap(t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }
ConstMatrixMap as_matrix(const Tensor& t) {
  return ConstMatrixMap(t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols()));
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return {rows, cols}; }

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidInput(what);
}

void accumulate(Tape& tape, Var v, const Tensor& g) {
  if (!tape.requires_grad(v)) return;
  auto dst = tape.grad_slot(v).data();
  const auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var add(Tape& tape, Var a, Var b) {
  const Tensor& x = tape.value(a);
  const Tensor& y = tape.value(b);
  require(x.same_shape(y), "add: shape mismatch " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  return tape.push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

Var scale(Tape& tape, Var x, double factor) {
  Tensor out = tape.value(x);
  for (auto& v : out.data()) v *= factor;
  return tape.push(std::move(out), {x}, [x, factor](Tape& t, const Tensor& g) {
    if (!t.requires_grad(x)) return;
    auto dst = t.grad_slot(x).data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * g[i];
  });
}

Var sum(Tape& tape, Var x) {
  double total = 0.0;
  for (double v : tape.value(x).data()) total += v;
  return tape.push(Tensor::scalar(total), {x}, [x](Tape& t, const Tensor& g) {
    if (!t.requires_grad(x)) return;
    for (auto& d : t.grad_slot(x).data()) d += g[0];
  });
}

Var embedding(Tape& tape, Var table, std::span<const int> ids) {
  const Tensor& w = tape.value(table);
  require(w.rank() == 2, "embedding: table must be rank 2");
  const std::size_t vocab = w.rows();
  const std::size_t width = w.cols();
  Tensor out(matrix_shape(ids.size(), width));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && std::size_t(ids[i]) < vocab, "embedding: id " + std::to_string(ids[i]) + " out of range");
    std::copy_n(w.row(std::size_t(ids[i])).begin(), width, out.row(i).begin());
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return tape.push(std::move(out), {table}, [table, saved = std::move(saved)](Tape& t, const Tensor& g) {
    if (!t.requires_grad(table)) return;
    Tensor& dw = t.grad_slot(table);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      auto dst = dw.row(std::size_t(saved[i]));
      auto src = g.row(i);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  });
}

Var linear(Tape& tape, Var x, Var w) {
  const Tensor& in = tape.value(x);
  const Tensor& weight = tape.value(w);
  require(weight.rank() == 2 && in.cols() == weight.rows(),
          "linear: input " + shape_string(in.shape()) + " incompatible with weight " + shape_string(weight.shape()));
  Tensor out(matrix_shape(in.rows(), weight.cols()));
  as_matrix(out).noalias() = as_matrix(in) * as_matrix(weight);
  return tape.push(std::move(out), {x, w}, [x, w](Tape& t, const Tensor& g) {
    if (t.requires_grad(x)) as_matrix(t.grad_slot(x)).noalias() += as_matrix(g) * as_matrix(t.value(w)).transpose();
    if (t.requires_grad(w)) as_matrix(t.grad_slot(w)).noalias() += as_matrix(t.value(x)).transpose() * as_matrix(g);
  });
}

Var linear(Tape& tape, Var x, Var w, Var bias) {
  Var y = linear(tape, x, w);
  const Tensor& b = tape.value(bias);
  require(b.size() == tape.value(w).cols(), "linear: bias width mismatch");
  Tensor out = tape.value(y);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
  }
  return tape.push(std::move(out), {y, bias}, [y, bias](Tape& t, const Tensor& g) {
    accumulate(t, y, g);
    if (t.requires_grad(bias)) {
      auto db = t.grad_slot(bias).data();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto row = g.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) db[c] += row[c];
      }
    }
  });
}

Var matmul_transposed(Tape& tape, Var x, Var w) {
  const Tensor& in = tape.value(x);
  const Tensor& weight = tape.value(w);
  require(weight.rank() == 2 && in.cols() == weight.cols(), "matmul_transposed: width mismatch");
  Tensor out(matrix_shape(in.rows(), weight.rows()));
  as_matrix(out).noalias() = as_matrix(in) * as_matrix(weight).transpose();
  return tape.push(std::move(out), {x, w}, [x, w](Tape& t, const Tensor& g) {
    if (t.requires_grad(x)) as_matrix(t.grad_slot(x)).noalias() += as_matrix(g) * as_matrix(t.value(w));
    if (t.requires_grad(w)) as_matrix(t.grad_slot(w)).noalias() += as_matrix(g).transpose() * as_matrix(t.value(x));
  });
}

Var relu(Tape& tape, Var x) {
  Tensor out = tape.value(x);
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return tape.push(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    if (!t.requires_grad(x)) return;
    const Tensor& in = t.value(x);
    auto dst = t.grad_slot(x).data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (in[i] > 0.0) dst[i] += g[i];
    }
  });
}

Var layer_norm(Tape& tape, Var x, Var gain, Var bias, double eps) {
  const Tensor& in = tape.value(x);
  const Tensor& gamma = tape.value(gain);
  const Tensor& beta = tape.value(bias);
  const std::size_t n = in.rows();
  const std::size_t d = in.cols();
  require(gamma.size() == d && beta.size() == d, "layer_norm: gain/bias width mismatch");

  Tensor out(in.shape());
  Tensor normed(in.shape());
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = in.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= double(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= double(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      normed.at(r, c) = (row[c] - mean) * inv_std[r];
      out.at(r, c) = normed.at(r, c) * gamma[c] + beta[c];
    }
  }
  return tape.push(std::move(out), {x, gain, bias},
                   [x, gain, bias, normed = std::move(normed), inv_std = std::move(inv_std)](Tape& t, const Tensor& g) {
                     const std::size_t rows = normed.rows();
                     const std::size_t width = normed.cols();
                     const Tensor& gam = t.value(gain);
                     if (t.requires_grad(gain) || t.requires_grad(bias)) {
                       const bool want_gain = t.requires_grad(gain);
                       const bool want_bias = t.requires_grad(bias);
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t c = 0; c < width; ++c) {
                           if (want_gain) t.grad_slot(gain)[c] += g.at(r, c) * normed.at(r, c);
                           if (want_bias) t.grad_slot(bias)[c] += g.at(r, c);
                         }
                       }
                     }
                     if (!t.requires_grad(x)) return;
                     Tensor& dx = t.grad_slot(x);
                     std::vector<double> dn(width);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double mean_dn = 0.0;
                       double mean_dn_n = 0.0;
                       for (std::size_t c = 0; c < width; ++c) {
                         dn[c] = g.at(r, c) * gam[c];
                         mean_dn += dn[c];
                         mean_dn_n += dn[c] * normed.at(r, c);
                       }
                       mean_dn /= double(width);
                       mean_dn_n /= double(width);
                       for (std::size_t c = 0; c < width; ++c) {
                         dx.at(r, c) += inv_std[r] * (dn[c] - mean_dn - normed.at(r, c) * mean_dn_n);
                       }
                     }
                   });
}

Var causal_attention(Tape& tape, Var q, Var k, Var v, std::size_t heads) {
  const Tensor& qt = tape.value(q);
  const Tensor& kt = tape.value(k);
  const Tensor& vt = tape.value(v);
  require(qt.same_shape(kt) && qt.same_shape(vt), "causal_attention: q/k/v shape mismatch");
  const std::size_t n = qt.rows();
  const std::size_t d = qt.cols();
  require(heads > 0 && d % heads == 0, "causal_attention: width not divisible by head count");
  const std::size_t dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(double(dh));

  // probs[h] is the n x n causal attention matrix of head h.
  std::vector<RowMatrix> probs(heads);
  Tensor out(qt.shape());
  auto qm = as_matrix(qt);
  auto km = as_matrix(kt);
  auto vm = as_matrix(vt);
  auto om = as_matrix(out);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto cols = Eigen::seqN(Eigen::Index(h * dh), Eigen::Index(dh));
    RowMatrix scores = (qm(Eigen::all, cols) * km(Eigen::all, cols).transpose()) * inv_scale;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = scores(Eigen::Index(i), 0);
      for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, scores(Eigen::Index(i), Eigen::Index(j)));
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double e = j <= i ? std::exp(scores(Eigen::Index(i), Eigen::Index(j)) - mx) : 0.0;
        scores(Eigen::Index(i), Eigen::Index(j)) = e;
        z += e;
      }
      scores.row(Eigen::Index(i)) /= z;
    }
    om(Eigen::all, cols).noalias() = scores * vm(Eigen::all, cols);
    probs[h] = std::move(scores);
  }

  return tape.push(std::move(out), {q, k, v}, [q, k, v, heads, dh, inv_scale, probs = std::move(probs)](Tape& t, const Tensor& g) {
    auto gm = as_matrix(g);
    auto qm = as_matrix(t.value(q));
    auto km = as_matrix(t.value(k));
    auto vm = as_matrix(t.value(v));
    const bool want_q = t.requires_grad(q);
    const bool want_k = t.requires_grad(k);
    const bool want_v = t.requires_grad(v);
    for (std::size_t h = 0; h < heads; ++h) {
      const auto cols = Eigen::seqN(Eigen::Index(h * dh), Eigen::Index(dh));
      const RowMatrix& p = probs[h];
      if (want_v) as_matrix(t.grad_slot(v))(Eigen::all, cols).noalias() += p.transpose() * gm(Eigen::all, cols);
      if (!want_q && !want_k) continue;
      RowMatrix dp = gm(Eigen::all, cols) * vm(Eigen::all, cols).transpose();
      // Softmax Jacobian, row-wise; masked entries have p == 0 and stay zero.
      Eigen::VectorXd row_dot = (dp.cwiseProduct(p)).rowwise().sum();
      RowMatrix ds = p.cwiseProduct(dp.colwise() - row_dot) * inv_scale;
      if (want_q) as_matrix(t.grad_slot(q))(Eigen::all, cols).noalias() += ds * km(Eigen::all, cols);
      if (want_k) as_matrix(t.grad_slot(k))(Eigen::all, cols).noalias() += ds.transpose() * qm(Eigen::all, cols);
    }
  });
}

Var concat_columns(Tape& tape, Var a, Var b) {
  const Tensor& x = tape.value(a);
  const Tensor& y = tape.value(b);
  require(x.rows() == y.rows(), "concat_columns: row count mismatch");
  const std::size_t ca = x.cols();
  const std::size_t cb = y.cols();
  Tensor out(matrix_shape(x.rows(), ca + cb));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::copy_n(x.row(r).begin(), ca, out.row(r).begin());
    std::copy_n(y.row(r).begin(), cb, out.row(r).begin() + std::ptrdiff_t(ca));
  }
  return tape.push(std::move(out), {a, b}, [a, b, ca, cb](Tape& t, const Tensor& g) {
    for (std::size_t r = 0; r < g.rows(); ++r) {
      auto src = g.row(r);
      if (t.requires_grad(a)) {
        auto dst = t.grad_slot(a).row(r);
        for (std::size_t c = 0; c < ca; ++c) dst[c] += src[c];
      }
      if (t.requires_grad(b)) {
        auto dst = t.grad_slot(b).row(r);
        for (std::size_t c = 0; c < cb; ++c) dst[c] += src[ca + c];
      }
    }
  });
}

Var last_row(Tape& tape, Var x) {
  const Tensor& in = tape.value(x);
  require(in.rows() >= 1, "last_row: empty input");
  const std::size_t last = in.rows() - 1;
  const auto src = in.row(last);
  Tensor out(matrix_shape(1, in.cols()), std::vector<double>(src.begin(), src.end()));
  return tape.push(std::move(out), {x}, [x, last](Tape& t, const Tensor& g) {
    if (!t.requires_grad(x)) return;
    auto dst = t.grad_slot(x).row(last);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += g[c];
  });
}

Var cross_entropy(Tape& tape, Var logits, std::span<const int> targets, std::span<const double> weights) {
  const Tensor& z = tape.value(logits);
  const std::size_t n = z.rows();
  const std::size_t classes = z.cols();
  require(targets.size() == n && weights.size() == n, "cross_entropy: targets/weights length mismatch");
  Tensor probs(z.shape());
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    require(targets[r] >= 0 && std::size_t(targets[r]) < classes, "cross_entropy: target out of range");
    const auto row = z.row(r);
    const double lse = log_sum_exp(row);
    auto p = probs.row(r);
    for (std::size_t c = 0; c < classes; ++c) p[c] = std::exp(row[c] - lse);
    if (weights[r] != 0.0) loss += weights[r] * (lse - row[std::size_t(targets[r])]);
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  return tape.push(Tensor::scalar(loss), {logits},
                   [logits, probs = std::move(probs), tgt = std::move(tgt), w = std::move(w)](Tape& t, const Tensor& g) {
                     Tensor& dz = t.grad_slot(logits);
                     for (std::size_t r = 0; r < tgt.size(); ++r) {
                       if (w[r] == 0.0) continue;
                       const double s = g[0] * w[r];
                       auto dst = dz.row(r);
                       auto p = probs.row(r);
                       for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += s * p[c];
                       dst[std::size_t(tgt[r])] -= s;
                     }
                   });
}

Var soft_cross_entropy(Tape& tape, Var logits, const Tensor& target_probs) {
  const Tensor& z = tape.value(logits);
  require(z.rows() == target_probs.rows() && z.cols() == target_probs.cols(), "soft_cross_entropy: target shape mismatch");
  Tensor probs(z.shape());
  double loss = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto row = z.row(r);
    const double lse = log_sum_exp(row);
    auto p = probs.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      p[c] = std::exp(row[c] - lse);
      const double tgt = target_probs.at(r, c);
      if (tgt != 0.0) loss += tgt * (lse - row[c]);
    }
  }
  return tape.push(Tensor::scalar(loss), {logits}, [logits, probs = std::move(probs), target_probs](Tape& t, const Tensor& g) {
    Tensor& dz = t.grad_slot(logits);
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      double mass = 0.0;
      for (std::size_t c = 0; c < probs.cols(); ++c) mass += target_probs.at(r, c);
      for (std::size_t c = 0; c < probs.cols(); ++c) {
        dz.at(r, c) += g[0] * (mass * probs.at(r, c) - target_probs.at(r, c));
      }
    }
  });
}

}  // namespace paln::nn
