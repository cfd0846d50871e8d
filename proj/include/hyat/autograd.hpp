#pragma once

#include "hyat/common.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace hyat {

// Reverse-mode tape over dense matrices. Every node owns its value and
// gradient buffer; backward() replays the tape in reverse. Handles are plain
// indices so composite ops can be written as free functions.
template <typename S>
class Tape {
 public:
  using M = Mat<S>;

  Tape() = default;
  Tape(const Tape&) = delete;             // backward closures capture `this`
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  int input(M v) {
    nodes_.push_back(Node{std::move(v), M(), nullptr});
    return int(nodes_.size()) - 1;
  }

  const M& val(int i) const { return nodes_[i].val; }

  const M& grad(int i) const { return nodes_[i].grad; }

  int matmul(int a, int b) {
    if (nodes_[a].val.cols() != nodes_[b].val.rows())
      throw shape_error("matmul: inner dimensions disagree");
    int out = input(nodes_[a].val * nodes_[b].val);
    nodes_[out].back = [this, a, b, out] {
      nodes_[a].grad.noalias() += nodes_[out].grad * nodes_[b].val.transpose();
      nodes_[b].grad.noalias() += nodes_[a].val.transpose() * nodes_[out].grad;
    };
    return out;
  }

  int add(int a, int b) {
    if (nodes_[a].val.rows() != nodes_[b].val.rows() ||
        nodes_[a].val.cols() != nodes_[b].val.cols())
      throw shape_error("add: shape mismatch");
    int out = input(nodes_[a].val + nodes_[b].val);
    nodes_[out].back = [this, a, b, out] {
      nodes_[a].grad += nodes_[out].grad;
      nodes_[b].grad += nodes_[out].grad;
    };
    return out;
  }

  int sub(int a, int b) {
    if (nodes_[a].val.rows() != nodes_[b].val.rows() ||
        nodes_[a].val.cols() != nodes_[b].val.cols())
      throw shape_error("sub: shape mismatch");
    int out = input(nodes_[a].val - nodes_[b].val);
    nodes_[out].back = [this, a, b, out] {
      nodes_[a].grad += nodes_[out].grad;
      nodes_[b].grad -= nodes_[out].grad;
    };
    return out;
  }

  int scale(int a, S c) {
    int out = input(nodes_[a].val * c);
    nodes_[out].back = [this, a, c, out] {
      nodes_[a].grad += nodes_[out].grad * c;
    };
    return out;
  }

  // bias: 1 x D, broadcast over the rows of a.
  int add_rowvec(int a, int bias) {
    if (nodes_[bias].val.rows() != 1 ||
        nodes_[bias].val.cols() != nodes_[a].val.cols())
      throw shape_error("add_rowvec: bias must be 1 x cols(a)");
    int out = input(nodes_[a].val.rowwise() +
                    nodes_[bias].val.row(0));
    nodes_[out].back = [this, a, bias, out] {
      nodes_[a].grad += nodes_[out].grad;
      nodes_[bias].grad.row(0) += nodes_[out].grad.colwise().sum();
    };
    return out;
  }

  int relu(int a) {
    int out = input(nodes_[a].val.cwiseMax(S(0)));
    nodes_[out].back = [this, a, out] {
      nodes_[a].grad.array() +=
          nodes_[out].grad.array() *
          (nodes_[a].val.array() > S(0)).template cast<S>();
    };
    return out;
  }

  int gelu(int a) {
    const M& x = nodes_[a].val;
    M y = x.unaryExpr([](S v) {
      return S(0.5) * v * (S(1) + S(std::erf(double(v) / M_SQRT2)));
    });
    int out = input(std::move(y));
    nodes_[out].back = [this, a, out] {
      const M& x = nodes_[a].val;
      M d = x.unaryExpr([](S v) {
        double xv = double(v);
        double cdf = 0.5 * (1.0 + std::erf(xv / M_SQRT2));
        double pdf = std::exp(-0.5 * xv * xv) / std::sqrt(2.0 * M_PI);
        return S(cdf + xv * pdf);
      });
      nodes_[a].grad.array() += nodes_[out].grad.array() * d.array();
    };
    return out;
  }

  int softmax_rows(int a) {
    const M& x = nodes_[a].val;
    M y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      S m = x.row(i).maxCoeff();
      Eigen::Array<S, 1, Eigen::Dynamic> e = (x.row(i).array() - m).exp();
      y.row(i) = e / e.sum();
    }
    int out = input(std::move(y));
    nodes_[out].back = [this, a, out] {
      const M& y = nodes_[out].val;
      const M& gy = nodes_[out].grad;
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        S dot = gy.row(i).dot(y.row(i));
        nodes_[a].grad.row(i).array() +=
            y.row(i).array() * (gy.row(i).array() - dot);
      }
    };
    return out;
  }

  // Per-row layer norm with affine gain/shift (each 1 x D).
  int layernorm_rows(int a, int gain, int shift, S eps = S(1e-6)) {
    const M& x = nodes_[a].val;
    Eigen::Index D = x.cols();
    if (nodes_[gain].val.cols() != D || nodes_[shift].val.cols() != D)
      throw shape_error("layernorm_rows: affine params must be 1 x D");
    M xhat(x.rows(), D);
    std::vector<S> inv_sigma(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      S mu = x.row(i).mean();
      S var = (x.row(i).array() - mu).square().mean();
      S is = S(1) / std::sqrt(var + eps);
      inv_sigma[size_t(i)] = is;
      xhat.row(i) = (x.row(i).array() - mu) * is;
    }
    M y = (xhat.array().rowwise() * nodes_[gain].val.row(0).array()).matrix()
              .rowwise() +
          nodes_[shift].val.row(0);
    int out = input(std::move(y));
    nodes_[out].back = [this, a, gain, shift, out, xhat, inv_sigma] {
      const M& gy = nodes_[out].grad;
      Eigen::Index D = gy.cols();
      nodes_[gain].grad.row(0) +=
          (gy.array() * xhat.array()).colwise().sum().matrix();
      nodes_[shift].grad.row(0) += gy.colwise().sum();
      for (Eigen::Index i = 0; i < gy.rows(); ++i) {
        Eigen::Array<S, 1, Eigen::Dynamic> dxhat =
            gy.row(i).array() * nodes_[gain].val.row(0).array();
        S m1 = dxhat.mean();
        S m2 = (dxhat * xhat.row(i).array()).mean();
        nodes_[a].grad.row(i).array() +=
            inv_sigma[size_t(i)] *
            (dxhat - m1 - xhat.row(i).array() * m2) ;
        (void)D;
      }
    };
    return out;
  }

  int transpose(int a) {
    int out = input(nodes_[a].val.transpose());
    nodes_[out].back = [this, a, out] {
      nodes_[a].grad += nodes_[out].grad.transpose();
    };
    return out;
  }

  int rows(int a, Eigen::Index r0, Eigen::Index n) {
    int out = input(nodes_[a].val.middleRows(r0, n));
    nodes_[out].back = [this, a, out, r0, n] {
      nodes_[a].grad.middleRows(r0, n) += nodes_[out].grad;
    };
    return out;
  }

  int cols(int a, Eigen::Index c0, Eigen::Index n) {
    int out = input(nodes_[a].val.middleCols(c0, n));
    nodes_[out].back = [this, a, out, c0, n] {
      nodes_[a].grad.middleCols(c0, n) += nodes_[out].grad;
    };
    return out;
  }

  int vcat(int a, int b) {
    if (nodes_[a].val.cols() != nodes_[b].val.cols())
      throw shape_error("vcat: column counts disagree");
    M y(nodes_[a].val.rows() + nodes_[b].val.rows(), nodes_[a].val.cols());
    y.topRows(nodes_[a].val.rows()) = nodes_[a].val;
    y.bottomRows(nodes_[b].val.rows()) = nodes_[b].val;
    int out = input(std::move(y));
    nodes_[out].back = [this, a, b, out] {
      Eigen::Index ra = nodes_[a].val.rows();
      nodes_[a].grad += nodes_[out].grad.topRows(ra);
      nodes_[b].grad += nodes_[out].grad.bottomRows(nodes_[b].val.rows());
    };
    return out;
  }

  int hcat(int a, int b) {
    if (nodes_[a].val.rows() != nodes_[b].val.rows())
      throw shape_error("hcat: row counts disagree");
    M y(nodes_[a].val.rows(), nodes_[a].val.cols() + nodes_[b].val.cols());
    y.leftCols(nodes_[a].val.cols()) = nodes_[a].val;
    y.rightCols(nodes_[b].val.cols()) = nodes_[b].val;
    int out = input(std::move(y));
    nodes_[out].back = [this, a, b, out] {
      Eigen::Index ca = nodes_[a].val.cols();
      nodes_[a].grad += nodes_[out].grad.leftCols(ca);
      nodes_[b].grad += nodes_[out].grad.rightCols(nodes_[b].val.cols());
    };
    return out;
  }

  // Image (channels x H*W, row-major pixel scan) -> patch matrix
  // (N x channels*P*P). Patch feature layout is channel-major, then the
  // P x P window in row-major order, matching the flatten convention the
  // patch-embedding weights are trained against.
  int patchify(int a, int H, int W, int P) {
    const M& x = nodes_[a].val;
    if (x.cols() != Eigen::Index(H) * W)
      throw shape_error("patchify: cols != H*W");
    if (H % P != 0 || W % P != 0)
      throw shape_error("patchify: image size not divisible by patch size");
    int Ch = int(x.rows());
    int ny = H / P, nx = W / P;
    M y(Eigen::Index(ny) * nx, Eigen::Index(Ch) * P * P);
    for (int py = 0; py < ny; ++py)
      for (int px = 0; px < nx; ++px) {
        Eigen::Index n = Eigen::Index(py) * nx + px;
        for (int c = 0; c < Ch; ++c)
          for (int dy = 0; dy < P; ++dy)
            for (int dx = 0; dx < P; ++dx)
              y(n, Eigen::Index(c) * P * P + dy * P + dx) =
                  x(c, Eigen::Index(py * P + dy) * W + px * P + dx);
      }
    int out = input(std::move(y));
    nodes_[out].back = [this, a, out, H, W, P] {
      const M& gy = nodes_[out].grad;
      int Ch = int(nodes_[a].val.rows());
      int ny = H / P, nx = W / P;
      for (int py = 0; py < ny; ++py)
        for (int px = 0; px < nx; ++px) {
          Eigen::Index n = Eigen::Index(py) * nx + px;
          for (int c = 0; c < Ch; ++c)
            for (int dy = 0; dy < P; ++dy)
              for (int dx = 0; dx < P; ++dx)
                nodes_[a].grad(c, Eigen::Index(py * P + dy) * W + px * P + dx) +=
                    gy(n, Eigen::Index(c) * P * P + dy * P + dx);
        }
    };
    return out;
  }

  // Mean cross-entropy of softmax(rows of `logits`) against integer targets.
  // Output is a 1x1 scalar node.
  int ce_rows(int logits, std::vector<int> targets) {
    const M& x = nodes_[logits].val;
    if (Eigen::Index(targets.size()) != x.rows())
      throw shape_error("ce_rows: one target per row required");
    M p(x.rows(), x.cols());
    S loss = S(0);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      int t = targets[size_t(i)];
      if (t < 0 || t >= x.cols()) throw input_error("ce_rows: target out of range");
      S m = x.row(i).maxCoeff();
      Eigen::Array<S, 1, Eigen::Dynamic> e = (x.row(i).array() - m).exp();
      S z = e.sum();
      p.row(i) = e / z;
      loss += std::log(z) + m - x(i, t);
    }
    loss /= S(x.rows());
    M y(1, 1);
    y(0, 0) = loss;
    int out = input(std::move(y));
    nodes_[out].back = [this, logits, out, p, targets] {
      S g = nodes_[out].grad(0, 0) / S(p.rows());
      M gx = p * g;
      for (Eigen::Index i = 0; i < p.rows(); ++i)
        gx(i, targets[size_t(i)]) -= g;
      nodes_[logits].grad += gx;
    };
    return out;
  }

  void backward(int node) {
    for (auto& n : nodes_) n.grad = M::Zero(n.val.rows(), n.val.cols());
    nodes_[node].grad.setConstant(S(1));
    for (int i = node; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    M val;
    M grad;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
};

}  // namespace hyat
