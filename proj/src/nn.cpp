#include "ldebm/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ldebm {

void zero_grads(const ParameterList& params) {
  for (Parameter* p : params) p->zero_grad();
}

ParameterGradient snapshot_grads(const ParameterList& params) {
  ParameterGradient out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back(p->grad);
  return out;
}

double grad_norm(const ParameterList& params) {
  double sq = 0.0;
  for (const Parameter* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

void clip_grad_norm(const ParameterList& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (Parameter* p : params) p->grad *= scale;
  }
}

namespace {

Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols,
                               double bound, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i)
      m(i, j) = bound * (2.0 * rng.uniform() - 1.0);
  return m;
}

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& x) {
  return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

}  // namespace

Linear::Linear(const std::string& name, int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = Parameter(name + ".weight", uniform_matrix(out, in, bound, rng));
  bias = Parameter(name + ".bias", uniform_matrix(out, 1, bound, rng));
  sn_u = uniform_matrix(out, 1, 1.0, rng).col(0);
  const double n = sn_u.norm();
  if (n > 0.0) sn_u /= n;
}

Eigen::MatrixXd Linear::forward(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd y(weight.value.rows(), x.cols());
  y.noalias() = weight.value * x;
  y.colwise() += bias.value.col(0);
  return y;
}

Eigen::MatrixXd Linear::input_gradient(const Eigen::MatrixXd& dy) const {
  Eigen::MatrixXd dx(weight.value.cols(), dy.cols());
  dx.noalias() = weight.value.transpose() * dy;
  return dx;
}

void Linear::accumulate(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dy) {
  weight.grad.noalias() += dy * x.transpose();
  bias.grad += dy.rowwise().sum();
}

double Linear::spectral_normalize() {
  const Eigen::MatrixXd& w = weight.value;
  Eigen::VectorXd v = w.transpose() * sn_u;
  const double vn = v.norm();
  if (vn == 0.0) return 0.0;
  v /= vn;
  Eigen::VectorXd u = w * v;
  const double sigma = u.norm();
  if (sigma == 0.0) return 0.0;
  sn_u = u / sigma;
  weight.value /= sigma;
  return sigma;
}

Mlp::Mlp(const std::string& name, int in, const std::vector<int>& hidden,
         int out, Rng& rng) {
  int prev = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers_.emplace_back(name + "." + std::to_string(i), prev, hidden[i], rng);
    prev = hidden[i];
  }
  layers_.emplace_back(name + "." + std::to_string(hidden.size()), prev, out,
                       rng);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Tape* tape) const {
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
  }
  Eigen::MatrixXd h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Eigen::MatrixXd y = layers_[i].forward(h);
    if (tape) {
      tape->inputs.push_back(std::move(h));
      tape->pre.push_back(y);
    }
    h = i + 1 < layers_.size() ? leaky_relu(y) : std::move(y);
  }
  return h;
}

Eigen::MatrixXd Mlp::backward(const Tape& tape, const Eigen::MatrixXd& dout,
                              bool accumulate) {
  Eigen::MatrixXd d = dout;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    if (k + 1 < layers_.size()) d = leaky_relu_backward(tape.pre[k], d);
    if (accumulate) layers_[k].accumulate(tape.inputs[k], d);
    d = layers_[k].input_gradient(d);
  }
  return d;
}

Eigen::MatrixXd Mlp::input_gradient(const Tape& tape,
                                    const Eigen::MatrixXd& dout) const {
  Eigen::MatrixXd d = dout;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    if (k + 1 < layers_.size()) d = leaky_relu_backward(tape.pre[k], d);
    d = layers_[k].input_gradient(d);
  }
  return d;
}

void Mlp::append_parameters(ParameterList& out) {
  for (Linear& l : layers_) l.append_parameters(out);
}

Gru::Gru(const std::string& name, int in, int hidden, Rng& rng)
    : hidden_(hidden) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_in_ = Parameter(name + ".w_in", uniform_matrix(3 * hidden, in, bound, rng));
  w_hid_ =
      Parameter(name + ".w_hid", uniform_matrix(3 * hidden, hidden, bound, rng));
  b_in_ = Parameter(name + ".b_in", uniform_matrix(3 * hidden, 1, bound, rng));
  b_hid_ = Parameter(name + ".b_hid", uniform_matrix(3 * hidden, 1, bound, rng));
}

Eigen::MatrixXd Gru::step(const Eigen::MatrixXd& x,
                          const Eigen::MatrixXd& h) const {
  const Eigen::Index H = hidden_;
  Eigen::MatrixXd ai(3 * H, x.cols());
  ai.noalias() = w_in_.value * x;
  ai.colwise() += b_in_.value.col(0);
  Eigen::MatrixXd ah(3 * H, x.cols());
  ah.noalias() = w_hid_.value * h;
  ah.colwise() += b_hid_.value.col(0);
  const Eigen::MatrixXd r = sigmoid(ai.topRows(H) + ah.topRows(H));
  const Eigen::MatrixXd u = sigmoid(ai.middleRows(H, H) + ah.middleRows(H, H));
  const Eigen::MatrixXd n =
      (ai.bottomRows(H).array() + r.array() * ah.bottomRows(H).array())
          .tanh()
          .matrix();
  return ((1.0 - u.array()) * n.array() + u.array() * h.array()).matrix();
}

Eigen::MatrixXd Gru::forward(const std::vector<Eigen::MatrixXd>& xs,
                             const std::vector<Eigen::ArrayXXd>& masks,
                             const Eigen::MatrixXd& h0,
                             std::vector<Eigen::MatrixXd>* states,
                             Tape* tape) const {
  const Eigen::Index H = hidden_;
  if (states) states->clear();
  if (tape) tape->clear();
  Eigen::MatrixXd h = h0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Eigen::MatrixXd& x = xs[k];
    Eigen::MatrixXd ai(3 * H, x.cols());
    ai.noalias() = w_in_.value * x;
    ai.colwise() += b_in_.value.col(0);
    Eigen::MatrixXd ah(3 * H, x.cols());
    ah.noalias() = w_hid_.value * h;
    ah.colwise() += b_hid_.value.col(0);
    Eigen::MatrixXd r = sigmoid(ai.topRows(H) + ah.topRows(H));
    Eigen::MatrixXd u = sigmoid(ai.middleRows(H, H) + ah.middleRows(H, H));
    Eigen::MatrixXd hn = ah.bottomRows(H);
    Eigen::MatrixXd n =
        (ai.bottomRows(H).array() + r.array() * hn.array()).tanh().matrix();
    Eigen::MatrixXd h_new =
        ((1.0 - u.array()) * n.array() + u.array() * h.array()).matrix();
    const Eigen::ArrayXXd& m = masks[k];
    Eigen::MatrixXd h_out =
        (h_new.array().rowwise() * m.row(0) +
         h.array().rowwise() * (1.0 - m.row(0)))
            .matrix();
    if (tape)
      tape->push_back(Step{x, h, std::move(r), std::move(u), std::move(n),
                           std::move(hn), m});
    h = std::move(h_out);
    if (states) states->push_back(h);
  }
  return h;
}

Eigen::MatrixXd Gru::backward(const Tape& tape,
                              const std::vector<Eigen::MatrixXd>& dstates,
                              const Eigen::MatrixXd& dfinal,
                              std::vector<Eigen::MatrixXd>* dxs,
                              bool accumulate) {
  const Eigen::Index H = hidden_;
  if (dxs) dxs->assign(tape.size(), Eigen::MatrixXd());
  Eigen::MatrixXd dh = dfinal;
  for (std::size_t k = tape.size(); k-- > 0;) {
    const Step& s = tape[k];
    if (k < dstates.size() && dstates[k].size() > 0) dh += dstates[k];
    const Eigen::ArrayXXd dh_new = dh.array().rowwise() * s.mask.row(0);
    Eigen::ArrayXXd dh_prev = dh.array().rowwise() * (1.0 - s.mask.row(0));

    const Eigen::ArrayXXd u = s.u.array();
    const Eigen::ArrayXXd r = s.r.array();
    const Eigen::ArrayXXd n = s.n.array();
    const Eigen::ArrayXXd dn = dh_new * (1.0 - u);
    const Eigen::ArrayXXd du = dh_new * (s.h_prev.array() - n);
    dh_prev += dh_new * u;
    const Eigen::ArrayXXd dan = dn * (1.0 - n.square());

    Eigen::MatrixXd dai(3 * H, s.x.cols());
    Eigen::MatrixXd dah(3 * H, s.x.cols());
    const Eigen::ArrayXXd dar = dan * s.hn.array() * r * (1.0 - r);
    const Eigen::ArrayXXd dau = du * u * (1.0 - u);
    dai.topRows(H) = dar.matrix();
    dai.middleRows(H, H) = dau.matrix();
    dai.bottomRows(H) = dan.matrix();
    dah.topRows(H) = dar.matrix();
    dah.middleRows(H, H) = dau.matrix();
    dah.bottomRows(H) = (dan * r).matrix();

    if (accumulate) {
      w_in_.grad.noalias() += dai * s.x.transpose();
      b_in_.grad += dai.rowwise().sum();
      w_hid_.grad.noalias() += dah * s.h_prev.transpose();
      b_hid_.grad += dah.rowwise().sum();
    }
    if (dxs) (*dxs)[k].noalias() = w_in_.value.transpose() * dai;
    Eigen::MatrixXd dh_next = dh_prev.matrix();
    dh_next.noalias() += w_hid_.value.transpose() * dah;
    dh = std::move(dh_next);
  }
  return dh;
}

void Gru::append_parameters(ParameterList& out) {
  out.push_back(&w_in_);
  out.push_back(&w_hid_);
  out.push_back(&b_in_);
  out.push_back(&b_hid_);
}

Adam::Adam(ParameterList params, Options opts)
    : params_(std::move(params)), opts_(opts) {
  if (!(opts_.lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  for (const Parameter* p : params_) {
    m_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    Eigen::MatrixXd g = p.grad;
    if (opts_.weight_decay > 0.0) g += opts_.weight_decay * p.value;
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
    v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g.cwiseProduct(g);
    p.value.array() -= opts_.lr * (m_[i].array() / bc1) /
                       ((v_[i].array() / bc2).sqrt() + opts_.eps);
  }
}

Eigen::RowVectorXd log_sum_exp(const Eigen::MatrixXd& logits) {
  const Eigen::RowVectorXd mx = logits.colwise().maxCoeff();
  Eigen::RowVectorXd out(logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j)
    out(j) = mx(j) + std::log((logits.col(j).array() - mx(j)).exp().sum());
  return out;
}

Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double mx = logits.col(j).maxCoeff();
    p.col(j) = (logits.col(j).array() - mx).exp().matrix();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

}  // namespace ldebm
