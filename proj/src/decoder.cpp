#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "ldebm/corpus.hpp"
#include "ldebm/inference_generation.hpp"

namespace ldebm {

GaussianDecoder::GaussianDecoder(int latent_dim, int obs_dim,
                                 const std::vector<int>& hidden, Rng& rng,
                                 double init_log_var)
    : latent_dim_(latent_dim), obs_dim_(obs_dim),
      net_("decoder", latent_dim, hidden, obs_dim, rng),
      log_var_("decoder.log_var", Eigen::MatrixXd::Constant(1, 1, init_log_var)) {}

void GaussianDecoder::check(const Eigen::MatrixXd& z0, const ObservationBatch& x) const {
  if (x.is_sequence() || x.points.rows() != obs_dim_ || z0.rows() != latent_dim_ ||
      z0.cols() != x.points.cols())
    throw std::invalid_argument("GaussianDecoder: shape mismatch");
}

namespace {

Eigen::RowVectorXd gaussian_ll(const Eigen::MatrixXd& resid, double log_var) {
  const double D = static_cast<double>(resid.rows());
  const double norm = -0.5 * D * (std::log(2.0 * std::numbers::pi) + log_var);
  return (norm - 0.5 * std::exp(-log_var) * resid.colwise().squaredNorm().array())
      .matrix();
}

}  // namespace

Eigen::RowVectorXd GaussianDecoder::log_likelihood(const Eigen::MatrixXd& z0,
                                                   const ObservationBatch& x) const {
  check(z0, x);
  return gaussian_ll(x.points - net_.forward(z0), log_var());
}

Eigen::RowVectorXd GaussianDecoder::forward(const Eigen::MatrixXd& z0,
                                            const ObservationBatch& x) {
  check(z0, x);
  resid_ = x.points - net_.forward(z0, &tape_);
  return gaussian_ll(resid_, log_var());
}

Eigen::MatrixXd GaussianDecoder::backward(const Eigen::RowVectorXd& dlogp) {
  const double inv_var = std::exp(-log_var());
  // d log p / d mean = resid / var
  const Eigen::MatrixXd dmean = (resid_ * inv_var).array().rowwise() * dlogp.array();
  const Eigen::RowVectorXd dlv =
      (-0.5 * obs_dim_ + 0.5 * inv_var * resid_.colwise().squaredNorm().array()).matrix();
  log_var_.grad(0, 0) += dlv.dot(dlogp);
  return net_.backward(tape_, dmean, true);
}

ObservationBatch GaussianDecoder::generate(const Eigen::MatrixXd& z0, GenerationMode mode,
                                           Rng& rng) const {
  ObservationBatch out;
  out.points = mean(z0);
  if (mode == GenerationMode::kSample) {
    const double sd = std::exp(0.5 * log_var());
    for (Eigen::Index j = 0; j < out.points.cols(); ++j)
      for (Eigen::Index i = 0; i < out.points.rows(); ++i) out.points(i, j) += sd * rng.normal();
  }
  return out;
}

ParameterList GaussianDecoder::parameters() {
  ParameterList out;
  net_.append_parameters(out);
  out.push_back(&log_var_);
  return out;
}

SequenceDecoder::SequenceDecoder(int vocab_size, int latent_dim, int embed_dim,
                                 int hidden_dim, Rng& rng)
    : vocab_(vocab_size), latent_dim_(latent_dim),
      embed_("decoder.embed", 0.1 * rng.normal_matrix(embed_dim, vocab_size)),
      init_("decoder.init", latent_dim, hidden_dim, rng),
      gru_("decoder.gru", embed_dim + latent_dim, hidden_dim, rng),
      out_("decoder.out", hidden_dim, vocab_size, rng) {}

std::vector<Eigen::MatrixXd> SequenceDecoder::step_inputs(const PaddedTokens& in,
                                                          const Eigen::MatrixXd& z0) const {
  std::vector<Eigen::MatrixXd> xs = embed_token_steps(embed_, in);
  const Eigen::Index E = embed_.value.rows();
  for (auto& x : xs) {
    Eigen::MatrixXd full(E + latent_dim_, x.cols());
    full << x, z0;
    x = std::move(full);
  }
  return xs;
}

Eigen::RowVectorXd SequenceDecoder::run(const Eigen::MatrixXd& z0,
                                        const ObservationBatch& x, Cache* cache) const {
  if (!x.is_sequence() || z0.rows() != latent_dim_ ||
      z0.cols() != static_cast<Eigen::Index>(x.tokens.size()))
    throw std::invalid_argument("SequenceDecoder: shape mismatch");
  PaddedTokens inputs = pad_tokens(x.tokens, true, vocab_);
  const PaddedTokens targets = pad_tokens(x.tokens, false, vocab_);
  const Eigen::MatrixXd h0_pre = init_.forward(z0);
  const Eigen::MatrixXd h0 = h0_pre.array().tanh().matrix();
  std::vector<Eigen::MatrixXd> states;
  Gru::Tape tape;
  gru_.forward(step_inputs(inputs, z0), inputs.masks, h0, &states,
               cache ? &tape : nullptr);

  const Eigen::Index B = z0.cols();
  Eigen::RowVectorXd ll = Eigen::RowVectorXd::Zero(B);
  std::vector<Eigen::MatrixXd> probs;
  for (std::size_t k = 0; k < states.size(); ++k) {
    const Eigen::MatrixXd logits = out_.forward(states[k]);
    const Eigen::RowVectorXd lse = log_sum_exp(logits);
    for (Eigen::Index j = 0; j < B; ++j)
      if (targets.masks[k](0, j) > 0.0) ll(j) += logits(targets.ids[k][j], j) - lse(j);
    if (cache) probs.push_back(softmax(logits));
  }
  if (cache) {
    cache->z0 = z0;
    cache->inputs = std::move(inputs);
    cache->targets = targets.ids;
    cache->states = std::move(states);
    cache->probs = std::move(probs);
    cache->tape = std::move(tape);
    cache->h0_pre = h0_pre;
  }
  return ll;
}

Eigen::RowVectorXd SequenceDecoder::log_likelihood(const Eigen::MatrixXd& z0,
                                                   const ObservationBatch& x) const {
  return run(z0, x, nullptr);
}

Eigen::RowVectorXd SequenceDecoder::forward(const Eigen::MatrixXd& z0,
                                            const ObservationBatch& x) {
  return run(z0, x, &cache_);
}

Eigen::MatrixXd SequenceDecoder::backward(const Eigen::RowVectorXd& dlogp) {
  const Cache& c = cache_;
  const Eigen::Index B = c.z0.cols();
  std::vector<Eigen::MatrixXd> dstates(c.states.size());
  for (std::size_t k = 0; k < c.states.size(); ++k) {
    // d log softmax[target] / d logits = onehot - p
    Eigen::MatrixXd dlogits = -c.probs[k];
    for (Eigen::Index j = 0; j < B; ++j) {
      const double m = c.inputs.masks[k](0, j);
      if (m > 0.0) {
        dlogits(c.targets[k][j], j) += 1.0;
        dlogits.col(j) *= dlogp(j);
      } else {
        dlogits.col(j).setZero();
      }
    }
    out_.accumulate(c.states[k], dlogits);
    dstates[k] = out_.input_gradient(dlogits);
  }
  std::vector<Eigen::MatrixXd> dxs;
  const Eigen::MatrixXd dh0 = gru_.backward(
      c.tape, dstates, Eigen::MatrixXd::Zero(gru_.hidden_dim(), B), &dxs, true);
  scatter_token_grad(embed_, c.inputs, dxs);
  const Eigen::MatrixXd dh0_pre =
      (dh0.array() * (1.0 - c.h0_pre.array().tanh().square())).matrix();
  init_.accumulate(c.z0, dh0_pre);
  Eigen::MatrixXd dz0 = init_.input_gradient(dh0_pre);
  for (std::size_t k = 0; k < dxs.size(); ++k)
    dz0 += (dxs[k].bottomRows(latent_dim_).array().rowwise() *
            c.inputs.masks[k].row(0))
               .matrix();
  return dz0;
}

ObservationBatch SequenceDecoder::generate(const Eigen::MatrixXd& z0, GenerationMode mode,
                                           Rng& rng) const {
  const Eigen::Index B = z0.cols();
  const Eigen::Index E = embed_.value.rows();
  ObservationBatch out;
  out.tokens.assign(B, {});
  std::vector<bool> done(B, false);
  std::vector<int> prev(B, kBosId);
  Eigen::MatrixXd h = init_.forward(z0).array().tanh().matrix();
  Eigen::MatrixXd x(E + latent_dim_, B);
  x.bottomRows(latent_dim_) = z0;
  for (int k = 0; k < kMaxSentenceTokens; ++k) {
    for (Eigen::Index j = 0; j < B; ++j) x.col(j).head(E) = embed_.value.col(prev[j]);
    h = gru_.step(x, h);
    Eigen::MatrixXd logits = out_.forward(h);
    logits.row(kBosId).setConstant(-std::numeric_limits<double>::infinity());
    const bool last = k == kMaxSentenceTokens - 1;
    bool all_done = true;
    for (Eigen::Index j = 0; j < B; ++j) {
      if (done[j]) continue;
      int tok = 0;
      if (last) {
        tok = kEosId;  // hard cap: the sentence closes here
      } else if (mode == GenerationMode::kGreedy) {
        logits.col(j).maxCoeff(&tok);
      } else {
        const Eigen::VectorXd p = softmax(logits.col(j));
        double u = rng.uniform(), acc = 0.0;
        tok = static_cast<int>(p.size()) - 1;
        for (Eigen::Index v = 0; v < p.size(); ++v) {
          acc += p(v);
          if (u < acc) {
            tok = static_cast<int>(v);
            break;
          }
        }
      }
      out.tokens[j].push_back(tok);
      prev[j] = tok;
      if (tok == kEosId) done[j] = true;
      all_done = all_done && done[j];
    }
    if (all_done) break;
  }
  return out;
}

ParameterList SequenceDecoder::parameters() {
  ParameterList out{&embed_};
  init_.append_parameters(out);
  gru_.append_parameters(out);
  out_.append_parameters(out);
  return out;
}

Eigen::RowVectorXd decode_log_likelihood(const Decoder& dec, const Eigen::MatrixXd& z0,
                                         const ObservationBatch& x) {
  return dec.log_likelihood(z0, x);
}

ObservationBatch generate(const Decoder& dec, const Eigen::MatrixXd& z0,
                          GenerationMode mode, Rng& rng) {
  return dec.generate(z0, mode, rng);
}

}  // namespace ldebm
