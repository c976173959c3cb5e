#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "ldebm/rng.hpp"

namespace ldebm {

/// A named trainable tensor with its gradient accumulator. Biases are stored
/// as (n x 1) matrices so every parameter shares one representation.
struct Parameter {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;

  Parameter() = default;
  Parameter(std::string n, Eigen::MatrixXd v)
      : name(std::move(n)), value(std::move(v)),
        grad(Eigen::MatrixXd::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
};

using ParameterList = std::vector<Parameter*>;
using ParameterGradient = std::vector<Eigen::MatrixXd>;

void zero_grads(const ParameterList& params);
ParameterGradient snapshot_grads(const ParameterList& params);
double grad_norm(const ParameterList& params);
/// Rescales all gradients so their global L2 norm is at most max_norm.
void clip_grad_norm(const ParameterList& params, double max_norm);

constexpr double kLeakySlope = 0.2;

inline Eigen::MatrixXd leaky_relu(const Eigen::MatrixXd& x) {
  return x.cwiseMax(kLeakySlope * x);
}

/// dL/dx given dL/dy and the pre-activation x.
inline Eigen::MatrixXd leaky_relu_backward(const Eigen::MatrixXd& x,
                                           const Eigen::MatrixXd& dy) {
  return (x.array() > 0.0).select(dy, kLeakySlope * dy);
}

/// Affine map y = W x + b over column batches.
class Linear {
 public:
  Linear() = default;
  /// Uniform(-1/sqrt(in), 1/sqrt(in)) initialization for W and b.
  Linear(const std::string& name, int in, int out, Rng& rng);

  int in_dim() const { return static_cast<int>(weight.value.cols()); }
  int out_dim() const { return static_cast<int>(weight.value.rows()); }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd input_gradient(const Eigen::MatrixXd& dy) const;
  /// Adds dL/dW and dL/db for the batch (x, dy).
  void accumulate(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy);

  /// One power-iteration update of the persisted singular vectors followed
  /// by W <- W / sigma_hat. Zero matrices are left untouched. Returns the
  /// estimate sigma_hat used.
  double spectral_normalize();

  void append_parameters(ParameterList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Parameter weight;
  Parameter bias;
  Eigen::VectorXd sn_u;  // left singular vector estimate
};

/// Stack of Linear layers with leaky-ReLU between them (none after the last).
class Mlp {
 public:
  struct Tape {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer (post-activation)
    std::vector<Eigen::MatrixXd> pre;     // output of each layer (pre-activation)
  };

  Mlp() = default;
  Mlp(const std::string& name, int in, const std::vector<int>& hidden, int out,
      Rng& rng);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Tape* tape = nullptr) const;
  /// Backprop dL/dout; accumulates parameter grads when `accumulate`.
  Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& dout,
                           bool accumulate);
  Eigen::MatrixXd input_gradient(const Tape& tape,
                                 const Eigen::MatrixXd& dout) const;

  void append_parameters(ParameterList& out);
  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }

 private:
  std::vector<Linear> layers_;
};

/// Single-layer gated recurrent unit over padded column batches.
/// r = sig(Wr x + Ur h), u = sig(Wu x + Uu h), n = tanh(Wn x + r*(Un h)),
/// h' = (1-u)*n + u*h; gate rows are stacked [r; u; n] in W_i and W_h.
class Gru {
 public:
  struct Step {
    Eigen::MatrixXd x, h_prev, r, u, n, hn;  // hn = Un h + bn
    Eigen::ArrayXXd mask;                    // 1 x B, 1 where the step is live
  };
  using Tape = std::vector<Step>;

  Gru() = default;
  Gru(const std::string& name, int in, int hidden, Rng& rng);

  int hidden_dim() const { return hidden_; }

  /// Runs the cell over xs (one input matrix per time step). A column whose
  /// mask entry is 0 carries its hidden state through unchanged.
  Eigen::MatrixXd forward(const std::vector<Eigen::MatrixXd>& xs,
                          const std::vector<Eigen::ArrayXXd>& masks,
                          const Eigen::MatrixXd& h0,
                          std::vector<Eigen::MatrixXd>* states, Tape* tape) const;

  /// One step; used by autoregressive generation.
  Eigen::MatrixXd step(const Eigen::MatrixXd& x, const Eigen::MatrixXd& h) const;

  /// BPTT. dstates[k] is dL/dh_k from outside (may be empty for zero),
  /// dfinal is dL/dh_T. Returns dL/dh0 and fills dxs.
  Eigen::MatrixXd backward(const Tape& tape,
                           const std::vector<Eigen::MatrixXd>& dstates,
                           const Eigen::MatrixXd& dfinal,
                           std::vector<Eigen::MatrixXd>* dxs, bool accumulate);

  void append_parameters(ParameterList& out);

 private:
  int hidden_ = 0;
  Parameter w_in_, w_hid_, b_in_, b_hid_;
};

/// Adam with optional L2 weight decay (folded into the gradient) and
/// exponential learning-rate decay.
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double lr_decay = 1.0;  // multiplied into lr by decay_lr()
  };

  Adam(ParameterList params, Options opts);

  void step();
  void decay_lr() { opts_.lr *= opts_.lr_decay; }
  double lr() const { return opts_.lr; }
  long steps() const { return t_; }
  const ParameterList& parameters() const { return params_; }

 private:
  ParameterList params_;
  Options opts_;
  std::vector<Eigen::MatrixXd> m_, v_;
  long t_ = 0;
};

/// Numerically stable per-column log-sum-exp.
Eigen::RowVectorXd log_sum_exp(const Eigen::MatrixXd& logits);
/// Per-column softmax.
Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits);

}  // namespace ldebm
