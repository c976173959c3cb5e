#include "ldebm/inference_generation.hpp"

#include "ldebm/corpus.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ldebm {

ObservationBatch ObservationBatch::select(const std::vector<int>& idx) const {
  ObservationBatch out;
  if (is_sequence()) {
    out.tokens.reserve(idx.size());
    for (int i : idx) out.tokens.push_back(tokens.at(i));
  } else {
    out.points.resize(points.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) out.points.col(j) = points.col(idx[j]);
  }
  return out;
}

PaddedTokens pad_tokens(const std::vector<std::vector<int>>& sentences,
                        bool prepend_bos, int vocab_size) {
  PaddedTokens p;
  std::size_t max_len = 0;
  for (const auto& s : sentences) {
    if (s.empty()) throw std::invalid_argument("empty token sequence");
    for (int id : s)
      if (id < 0 || id >= vocab_size)
        throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
    max_len = std::max(max_len, s.size());
    p.lengths.push_back(static_cast<int>(s.size()));
  }
  const Eigen::Index B = static_cast<Eigen::Index>(sentences.size());
  p.ids.assign(max_len, std::vector<int>(B, 0));
  p.masks.assign(max_len, Eigen::ArrayXXd::Zero(1, B));
  for (Eigen::Index j = 0; j < B; ++j) {
    const auto& s = sentences[j];
    for (std::size_t k = 0; k < s.size(); ++k) {
      p.ids[k][j] = prepend_bos ? (k == 0 ? kBosId : s[k - 1]) : s[k];
      p.masks[k](0, j) = 1.0;
    }
  }
  return p;
}

Eigen::RowVectorXd gaussian_log_density(const Eigen::MatrixXd& z,
                                        const Eigen::MatrixXd& mu,
                                        const Eigen::MatrixXd& log_var) {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const Eigen::ArrayXXd diff = (z - mu).array();
  const Eigen::ArrayXXd terms =
      -half_log_2pi - 0.5 * log_var.array() - 0.5 * diff.square() * (-log_var.array()).exp();
  return terms.colwise().sum().matrix();
}

EncodedBatch encode(const Encoder& enc, const ObservationBatch& x, const Rng& rng) {
  EncodedBatch out;
  out.post = enc.posterior(x);
  const Eigen::Index d = out.post.mu.rows(), B = out.post.mu.cols();
  out.eps.resize(d, B);
  for (Eigen::Index j = 0; j < B; ++j) {
    Rng col = rng.split(static_cast<std::uint64_t>(j));
    for (Eigen::Index i = 0; i < d; ++i) out.eps(i, j) = col.normal();
  }
  out.z0 = out.post.mu +
           ((0.5 * out.post.log_var.array()).exp() * out.eps.array()).matrix();
  out.log_q = gaussian_log_density(out.z0, out.post.mu, out.post.log_var);
  return out;
}

Encoded encode(const Encoder& enc, const ObservationBatch& x_single, Rng& rng) {
  if (x_single.size() != 1)
    throw std::invalid_argument("encode: expected a single observation");
  const Posterior post = enc.posterior(x_single);
  Eigen::VectorXd z0(post.mu.rows());
  for (Eigen::Index i = 0; i < z0.size(); ++i)
    z0(i) = post.mu(i, 0) + std::exp(0.5 * post.log_var(i, 0)) * rng.normal();
  return {z0, gaussian_log_density(z0, post.mu, post.log_var)(0)};
}

MlpEncoder::MlpEncoder(int obs_dim, int latent_dim, const std::vector<int>& hidden,
                       Rng& rng)
    : obs_dim_(obs_dim), latent_dim_(latent_dim),
      net_("encoder", obs_dim, hidden, 2 * latent_dim, rng) {}

Posterior MlpEncoder::posterior(const ObservationBatch& x) const {
  if (x.is_sequence() || x.points.rows() != obs_dim_)
    throw std::invalid_argument("MlpEncoder: observation dimension mismatch");
  const Eigen::MatrixXd out = net_.forward(x.points);
  return {out.topRows(latent_dim_), out.bottomRows(latent_dim_)};
}

Posterior MlpEncoder::forward(const ObservationBatch& x) {
  if (x.is_sequence() || x.points.rows() != obs_dim_)
    throw std::invalid_argument("MlpEncoder: observation dimension mismatch");
  const Eigen::MatrixXd out = net_.forward(x.points, &tape_);
  return {out.topRows(latent_dim_), out.bottomRows(latent_dim_)};
}

void MlpEncoder::backward(const Eigen::MatrixXd& dmu, const Eigen::MatrixXd& dlog_var) {
  Eigen::MatrixXd dout(2 * latent_dim_, dmu.cols());
  dout << dmu, dlog_var;
  net_.backward(tape_, dout, true);
}

ParameterList MlpEncoder::parameters() {
  ParameterList out;
  net_.append_parameters(out);
  return out;
}

GruEncoder::GruEncoder(int vocab_size, int latent_dim, int embed_dim, int hidden_dim,
                       Rng& rng)
    : vocab_(vocab_size), latent_dim_(latent_dim),
      embed_("encoder.embed", 0.1 * rng.normal_matrix(embed_dim, vocab_size)),
      gru_("encoder.gru", embed_dim, hidden_dim, rng),
      head_("encoder.head", hidden_dim, 2 * latent_dim, rng) {}

std::vector<Eigen::MatrixXd> embed_token_steps(const Parameter& embed,
                                               const PaddedTokens& p) {
  std::vector<Eigen::MatrixXd> xs;
  xs.reserve(p.ids.size());
  for (const auto& row : p.ids) {
    Eigen::MatrixXd x(embed.value.rows(), static_cast<Eigen::Index>(row.size()));
    for (std::size_t j = 0; j < row.size(); ++j) x.col(j) = embed.value.col(row[j]);
    xs.push_back(std::move(x));
  }
  return xs;
}

void scatter_token_grad(Parameter& embed, const PaddedTokens& p,
                        const std::vector<Eigen::MatrixXd>& dxs) {
  const Eigen::Index rows = embed.value.rows();
  for (std::size_t k = 0; k < p.ids.size(); ++k)
    for (std::size_t j = 0; j < p.ids[k].size(); ++j)
      if (p.masks[k](0, j) > 0.0) embed.grad.col(p.ids[k][j]) += dxs[k].col(j).head(rows);
}

Posterior GruEncoder::compute(const ObservationBatch& x, PaddedTokens* pad_out,
                              Gru::Tape* tape, Eigen::MatrixXd* h_out) const {
  if (!x.is_sequence()) throw std::invalid_argument("GruEncoder: expected token input");
  PaddedTokens pad = pad_tokens(x.tokens, false, vocab_);
  const Eigen::MatrixXd h0 =
      Eigen::MatrixXd::Zero(gru_.hidden_dim(), static_cast<Eigen::Index>(x.tokens.size()));
  Eigen::MatrixXd h =
      gru_.forward(embed_token_steps(embed_, pad), pad.masks, h0, nullptr, tape);
  const Eigen::MatrixXd out = head_.forward(h);
  if (pad_out) *pad_out = std::move(pad);
  if (h_out) *h_out = std::move(h);
  return {out.topRows(latent_dim_), out.bottomRows(latent_dim_)};
}

Posterior GruEncoder::posterior(const ObservationBatch& x) const {
  return compute(x, nullptr, nullptr, nullptr);
}

Posterior GruEncoder::forward(const ObservationBatch& x) {
  return compute(x, &pad_, &gru_tape_, &h_final_);
}

void GruEncoder::backward(const Eigen::MatrixXd& dmu, const Eigen::MatrixXd& dlog_var) {
  Eigen::MatrixXd dout(2 * latent_dim_, dmu.cols());
  dout << dmu, dlog_var;
  head_.accumulate(h_final_, dout);
  const Eigen::MatrixXd dh = head_.input_gradient(dout);
  std::vector<Eigen::MatrixXd> dxs;
  gru_.backward(gru_tape_, {}, dh, &dxs, true);
  scatter_token_grad(embed_, pad_, dxs);
}

ParameterList GruEncoder::parameters() {
  ParameterList out{&embed_};
  gru_.append_parameters(out);
  head_.append_parameters(out);
  return out;
}

}  // namespace ldebm
