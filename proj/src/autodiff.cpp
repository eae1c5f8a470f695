#include "semnav/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace semnav {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                      const char* who) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(who) + ": shape mismatch");
}
}  // namespace

TensorRef Tape::constant(Eigen::MatrixXd value) {
  return emplace(std::move(value), nullptr);
}

TensorRef Tape::leaf(const Eigen::MatrixXd& value,
                     Eigen::MatrixXd* grad_sink) {
  TensorRef t = emplace(value, nullptr);
  if (grad_sink) {
    if (grad_sink->rows() != value.rows() || grad_sink->cols() != value.cols())
      throw std::invalid_argument("Tape::leaf: grad sink shape mismatch");
    sinks_.emplace_back(t.index, grad_sink);
  }
  return t;
}

TensorRef Tape::emplace(Eigen::MatrixXd value,
                        std::function<void(Tape&, int)> backprop) {
  Node n;
  n.value = std::move(value);
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return TensorRef{static_cast<int>(nodes_.size()) - 1};
}

const Eigen::MatrixXd& Tape::value(TensorRef t) const {
  if (!t.valid() || t.index >= size())
    throw std::invalid_argument("Tape::value: invalid tensor");
  return nodes_[static_cast<std::size_t>(t.index)].value;
}

double Tape::scalar(TensorRef t) const {
  const Eigen::MatrixXd& v = value(t);
  if (v.rows() != 1 || v.cols() != 1)
    throw std::invalid_argument("Tape::scalar: tensor is not 1x1");
  return v(0, 0);
}

Eigen::MatrixXd& Tape::grad(int index) {
  Node& n = nodes_[static_cast<std::size_t>(index)];
  if (n.grad.size() == 0)
    n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

bool Tape::has_grad(int index) const {
  return nodes_[static_cast<std::size_t>(index)].grad.size() != 0;
}

void Tape::backward(TensorRef loss) {
  if (nodes_.empty() || !loss.valid() || loss.index >= size())
    throw std::logic_error("Tape::backward: no recorded computation");
  if (backward_ran_)
    throw std::logic_error("Tape::backward: tape already swept");
  const Eigen::MatrixXd& lv = nodes_[loss.index].value;
  if (lv.rows() != 1 || lv.cols() != 1)
    throw std::invalid_argument("Tape::backward: loss must be 1x1");
  backward_ran_ = true;
  grad(loss.index)(0, 0) = 1.0;
  for (int i = loss.index; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backprop && n.grad.size() != 0) n.backprop(*this, i);
  }
  for (auto& [idx, sink] : sinks_)
    if (has_grad(idx)) *sink += nodes_[idx].grad;
}

// --- Elementwise and linear ------------------------------------------------

TensorRef add(Tape& t, TensorRef a, TensorRef b) {
  check_same_shape(t.value(a), t.value(b), "add");
  return t.emplace(t.value(a) + t.value(b),
                   [ai = a.index, bi = b.index](Tape& tp, int self) {
                     const Eigen::MatrixXd& g = tp.node(self).grad;
                     tp.grad(ai) += g;
                     tp.grad(bi) += g;
                   });
}

TensorRef sub(Tape& t, TensorRef a, TensorRef b) {
  check_same_shape(t.value(a), t.value(b), "sub");
  return t.emplace(t.value(a) - t.value(b),
                   [ai = a.index, bi = b.index](Tape& tp, int self) {
                     const Eigen::MatrixXd& g = tp.node(self).grad;
                     tp.grad(ai) += g;
                     tp.grad(bi) -= g;
                   });
}

TensorRef hadamard(Tape& t, TensorRef a, TensorRef b) {
  check_same_shape(t.value(a), t.value(b), "hadamard");
  return t.emplace(t.value(a).cwiseProduct(t.value(b)),
                   [ai = a.index, bi = b.index](Tape& tp, int self) {
                     const Eigen::MatrixXd& g = tp.node(self).grad;
                     tp.grad(ai) += g.cwiseProduct(tp.node(bi).value);
                     tp.grad(bi) += g.cwiseProduct(tp.node(ai).value);
                   });
}

TensorRef scale(Tape& t, TensorRef a, double c) {
  return t.emplace(c * t.value(a), [ai = a.index, c](Tape& tp, int self) {
    tp.grad(ai) += c * tp.node(self).grad;
  });
}

TensorRef add_scalar(Tape& t, TensorRef a, double c) {
  return t.emplace(t.value(a).array() + c,
                   [ai = a.index](Tape& tp, int self) {
                     tp.grad(ai) += tp.node(self).grad;
                   });
}

TensorRef matmul(Tape& t, TensorRef a, TensorRef b) {
  if (t.value(a).cols() != t.value(b).rows())
    throw std::invalid_argument("matmul: inner dimension mismatch");
  return t.emplace(t.value(a) * t.value(b),
                   [ai = a.index, bi = b.index](Tape& tp, int self) {
                     const Eigen::MatrixXd& g = tp.node(self).grad;
                     tp.grad(ai) += g * tp.node(bi).value.transpose();
                     tp.grad(bi) += tp.node(ai).value.transpose() * g;
                   });
}

TensorRef matmul_nt(Tape& t, TensorRef a, TensorRef b) {
  if (t.value(a).cols() != t.value(b).cols())
    throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  return t.emplace(t.value(a) * t.value(b).transpose(),
                   [ai = a.index, bi = b.index](Tape& tp, int self) {
                     const Eigen::MatrixXd& g = tp.node(self).grad;
                     tp.grad(ai) += g * tp.node(bi).value;
                     tp.grad(bi) += g.transpose() * tp.node(ai).value;
                   });
}

TensorRef add_rowvec(Tape& t, TensorRef a, TensorRef row) {
  const Eigen::MatrixXd& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != t.value(a).cols())
    throw std::invalid_argument("add_rowvec: row shape mismatch");
  Eigen::MatrixXd out = t.value(a);
  out.rowwise() += rv.row(0);
  return t.emplace(std::move(out),
                   [ai = a.index, ri = row.index](Tape& tp, int self) {
                     const Eigen::MatrixXd& g = tp.node(self).grad;
                     tp.grad(ai) += g;
                     tp.grad(ri) += g.colwise().sum();
                   });
}

// --- Structural ------------------------------------------------------------

TensorRef gather_rows(Tape& t, TensorRef a, std::vector<int> rows) {
  const Eigen::MatrixXd& av = t.value(a);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= av.rows())
      throw std::invalid_argument("gather_rows: row index out of range");
    out.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
  }
  return t.emplace(std::move(out),
                   [ai = a.index, rows = std::move(rows)](Tape& tp, int self) {
                     const Eigen::MatrixXd& g = tp.node(self).grad;
                     Eigen::MatrixXd& ga = tp.grad(ai);
                     for (std::size_t i = 0; i < rows.size(); ++i)
                       ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
                   });
}

TensorRef replace_rows(Tape& t, TensorRef a, std::vector<int> rows,
                       TensorRef row_value) {
  const Eigen::MatrixXd& av = t.value(a);
  const Eigen::MatrixXd& rv = t.value(row_value);
  if (rv.rows() != 1 || rv.cols() != av.cols())
    throw std::invalid_argument("replace_rows: row value shape mismatch");
  Eigen::MatrixXd out = av;
  for (int r : rows) {
    if (r < 0 || r >= av.rows())
      throw std::invalid_argument("replace_rows: row index out of range");
    out.row(r) = rv.row(0);
  }
  return t.emplace(
      std::move(out), [ai = a.index, ri = row_value.index,
                       rows = std::move(rows)](Tape& tp, int self) {
        Eigen::MatrixXd g = tp.node(self).grad;  // copy; rows get zeroed
        Eigen::MatrixXd& gr = tp.grad(ri);
        for (int r : rows) {
          gr += g.row(r);
          g.row(r).setZero();
        }
        tp.grad(ai) += g;
      });
}

TensorRef slice_rows(Tape& t, TensorRef a, int start, int count) {
  const Eigen::MatrixXd& av = t.value(a);
  if (start < 0 || count < 0 || start + count > av.rows())
    throw std::invalid_argument("slice_rows: range out of bounds");
  return t.emplace(av.middleRows(start, count),
                   [ai = a.index, start, count](Tape& tp, int self) {
                     tp.grad(ai).middleRows(start, count) +=
                         tp.node(self).grad;
                   });
}

TensorRef slice_cols(Tape& t, TensorRef a, int start, int count) {
  const Eigen::MatrixXd& av = t.value(a);
  if (start < 0 || count < 0 || start + count > av.cols())
    throw std::invalid_argument("slice_cols: range out of bounds");
  return t.emplace(av.middleCols(start, count),
                   [ai = a.index, start, count](Tape& tp, int self) {
                     tp.grad(ai).middleCols(start, count) +=
                         tp.node(self).grad;
                   });
}

TensorRef concat_rows(Tape& t, std::span<const TensorRef> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  Eigen::Index rows = 0;
  const Eigen::Index cols = t.value(parts.front()).cols();
  for (TensorRef p : parts) {
    if (t.value(p).cols() != cols)
      throw std::invalid_argument("concat_rows: column mismatch");
    rows += t.value(p).rows();
  }
  Eigen::MatrixXd out(rows, cols);
  std::vector<int> indices;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (TensorRef p : parts) {
    out.middleRows(at, t.value(p).rows()) = t.value(p);
    indices.push_back(p.index);
    offsets.push_back(at);
    at += t.value(p).rows();
  }
  return t.emplace(std::move(out),
                   [indices = std::move(indices),
                    offsets = std::move(offsets)](Tape& tp, int self) {
                     const Eigen::MatrixXd& g = tp.node(self).grad;
                     for (std::size_t i = 0; i < indices.size(); ++i) {
                       Eigen::MatrixXd& gi = tp.grad(indices[i]);
                       gi += g.middleRows(offsets[i], gi.rows());
                     }
                   });
}

TensorRef concat_cols(Tape& t, std::span<const TensorRef> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  Eigen::Index cols = 0;
  const Eigen::Index rows = t.value(parts.front()).rows();
  for (TensorRef p : parts) {
    if (t.value(p).rows() != rows)
      throw std::invalid_argument("concat_cols: row mismatch");
    cols += t.value(p).cols();
  }
  Eigen::MatrixXd out(rows, cols);
  std::vector<int> indices;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (TensorRef p : parts) {
    out.middleCols(at, t.value(p).cols()) = t.value(p);
    indices.push_back(p.index);
    offsets.push_back(at);
    at += t.value(p).cols();
  }
  return t.emplace(std::move(out),
                   [indices = std::move(indices),
                    offsets = std::move(offsets)](Tape& tp, int self) {
                     const Eigen::MatrixXd& g = tp.node(self).grad;
                     for (std::size_t i = 0; i < indices.size(); ++i) {
                       Eigen::MatrixXd& gi = tp.grad(indices[i]);
                       gi += g.middleCols(offsets[i], gi.cols());
                     }
                   });
}

TensorRef stop_gradient(Tape& t, TensorRef a) {
  return t.constant(t.value(a));
}

// --- Nonlinearities and reductions -----------------------------------------

TensorRef layer_norm_rows(Tape& t, TensorRef x, TensorRef gain, TensorRef bias,
                          double eps) {
  const Eigen::MatrixXd& xv = t.value(x);
  const Eigen::MatrixXd& gv = t.value(gain);
  const Eigen::MatrixXd& bv = t.value(bias);
  if (gv.rows() != 1 || bv.rows() != 1 || gv.cols() != xv.cols() ||
      bv.cols() != xv.cols())
    throw std::invalid_argument("layer_norm_rows: gain/bias shape mismatch");

  const Eigen::Index rows = xv.rows(), cols = xv.cols();
  Eigen::MatrixXd xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mu = xv.row(r).mean();
    const Eigen::RowVectorXd centered = xv.row(r).array() - mu;
    const double var = centered.squaredNorm() / cols;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = centered * inv_std[r];
  }
  Eigen::MatrixXd out = xhat;
  out.array().rowwise() *= gv.row(0).array();
  out.rowwise() += bv.row(0);

  return t.emplace(
      std::move(out),
      [xi = x.index, gi = gain.index, bi = bias.index, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape& tp, int self) {
        const Eigen::MatrixXd& g = tp.node(self).grad;
        const Eigen::MatrixXd& gv = tp.node(gi).value;
        // d/dbias and d/dgain are straight column sums.
        tp.grad(bi) += g.colwise().sum();
        tp.grad(gi) += g.cwiseProduct(xhat).colwise().sum();
        // d/dx via the standard per-row normalization adjoint.
        Eigen::MatrixXd& gx = tp.grad(xi);
        const Eigen::Index cols = g.cols();
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const Eigen::RowVectorXd gy =
              g.row(r).cwiseProduct(gv.row(0));  // upstream through gain
          const double mean_gy = gy.mean();
          const double mean_gy_xhat = gy.cwiseProduct(xhat.row(r)).mean();
          gx.row(r) += inv_std[r] *
                       (gy.array() - mean_gy -
                        xhat.row(r).array() * mean_gy_xhat)
                           .matrix();
          (void)cols;
        }
      });
}

TensorRef gelu(Tape& t, TensorRef a) {
  const Eigen::MatrixXd& av = t.value(a);
  Eigen::MatrixXd out = av.unaryExpr([](double x) {
    return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  });
  return t.emplace(std::move(out), [ai = a.index](Tape& tp, int self) {
    const Eigen::MatrixXd& g = tp.node(self).grad;
    Eigen::MatrixXd local = tp.node(ai).value.unaryExpr([](double x) {
      return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
             x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    });
    if (tp.gelu_corrupted()) local *= 1.01;
    tp.grad(ai) += g.cwiseProduct(local);
  });
}

namespace {
// Shared row-stable softmax forward.
Eigen::MatrixXd softmax_value(const Eigen::MatrixXd& a) {
  Eigen::MatrixXd p(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.row(r).maxCoeff();
    const Eigen::ArrayXd e = (a.row(r).array() - m).exp();
    p.row(r) = e / e.sum();
  }
  return p;
}
}  // namespace

TensorRef softmax_rows(Tape& t, TensorRef a) {
  Eigen::MatrixXd p = softmax_value(t.value(a));
  return t.emplace(std::move(p), [ai = a.index](Tape& tp, int self) {
    const Eigen::MatrixXd& g = tp.node(self).grad;
    const Eigen::MatrixXd& p = tp.node(self).value;
    Eigen::MatrixXd& ga = tp.grad(ai);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double dot = g.row(r).dot(p.row(r));
      ga.row(r) +=
          p.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
  });
}

TensorRef log_softmax_rows(Tape& t, TensorRef a) {
  const Eigen::MatrixXd& av = t.value(a);
  Eigen::MatrixXd out(av.rows(), av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    const double m = av.row(r).maxCoeff();
    const double lse =
        m + std::log((av.row(r).array() - m).exp().sum());
    out.row(r) = av.row(r).array() - lse;
  }
  return t.emplace(std::move(out), [ai = a.index](Tape& tp, int self) {
    const Eigen::MatrixXd& g = tp.node(self).grad;
    const Eigen::MatrixXd p = tp.node(self).value.array().exp();
    Eigen::MatrixXd& ga = tp.grad(ai);
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      ga.row(r) += g.row(r) - g.row(r).sum() * p.row(r);
  });
}

TensorRef sum_all(Tape& t, TensorRef a) {
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = t.value(a).sum();
  return t.emplace(std::move(out), [ai = a.index](Tape& tp, int self) {
    tp.grad(ai).array() += tp.node(self).grad(0, 0);
  });
}

TensorRef mean_all(Tape& t, TensorRef a) {
  const double n = static_cast<double>(t.value(a).size());
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = t.value(a).sum() / n;
  return t.emplace(std::move(out), [ai = a.index, n](Tape& tp, int self) {
    tp.grad(ai).array() += tp.node(self).grad(0, 0) / n;
  });
}

TensorRef weighted_sum(Tape& t, TensorRef a, const Eigen::MatrixXd& w) {
  check_same_shape(t.value(a), w, "weighted_sum");
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = t.value(a).cwiseProduct(w).sum();
  return t.emplace(std::move(out), [ai = a.index, w](Tape& tp, int self) {
    tp.grad(ai) += tp.node(self).grad(0, 0) * w;
  });
}

TensorRef kl_divergence_loss(Tape& t, TensorRef logits,
                             const Eigen::VectorXd& target,
                             Eigen::VectorXd* predicted) {
  if (t.value(logits).rows() != 1 || t.value(logits).cols() != target.size()) {
    throw std::invalid_argument(
        "kl_divergence_loss: logits and target sizes differ");
  }
  TensorRef logp = log_softmax_rows(t, logits);
  if (predicted != nullptr) {
    *predicted = t.value(logp).row(0).array().exp();
  }
  double target_entropy = 0.0;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    if (target[i] > 0.0) target_entropy -= target[i] * std::log(target[i]);
  }
  TensorRef ce = scale(t, weighted_sum(t, logp, target.transpose()), -1.0);
  return add_scalar(t, ce, -target_entropy);
}

TensorRef cross_entropy_loss(Tape& t, TensorRef logits_row, int index) {
  const Eigen::Index n = t.value(logits_row).cols();
  if (t.value(logits_row).rows() != 1) {
    throw std::invalid_argument("cross_entropy_loss: logits must be one row");
  }
  if (index < 0 || index >= n) {
    throw std::invalid_argument("cross_entropy_loss: index out of range");
  }
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(1, n);
  onehot(0, index) = 1.0;
  TensorRef logp = log_softmax_rows(t, logits_row);
  return scale(t, weighted_sum(t, logp, onehot), -1.0);
}

}  // namespace semnav
