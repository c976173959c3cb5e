#pragma once

#include <memory>
#include <vector>

#include <Eigen/Core>

#include "ldebm/nn.hpp"
#include "ldebm/rng.hpp"

namespace ldebm {

/// Observations for one batch. Exactly one of the two modalities is used:
/// `points` (obs_dim x B) for vectors, `tokens` (each ending in <eos>) for
/// sentences.
struct ObservationBatch {
  Eigen::MatrixXd points;
  std::vector<std::vector<int>> tokens;

  bool is_sequence() const { return !tokens.empty(); }
  Eigen::Index size() const {
    return is_sequence() ? static_cast<Eigen::Index>(tokens.size()) : points.cols();
  }
  ObservationBatch select(const std::vector<int>& idx) const;
};

/// Diagonal Gaussian posterior parameters, d x B each.
struct Posterior {
  Eigen::MatrixXd mu;
  Eigen::MatrixXd log_var;
};

class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual int latent_dim() const = 0;
  /// Pure evaluation.
  virtual Posterior posterior(const ObservationBatch& x) const = 0;
  /// Evaluation that keeps what backward() needs.
  virtual Posterior forward(const ObservationBatch& x) = 0;
  /// Accumulates parameter grads for upstream dL/dmu and dL/dlog_var of the
  /// last forward().
  virtual void backward(const Eigen::MatrixXd& dmu, const Eigen::MatrixXd& dlog_var) = 0;
  virtual ParameterList parameters() = 0;
};

enum class GenerationMode { kGreedy, kSample };

class Decoder {
 public:
  virtual ~Decoder() = default;
  virtual int latent_dim() const = 0;
  virtual bool is_recurrent() const = 0;
  /// log p(x | z0) per column, pure.
  virtual Eigen::RowVectorXd log_likelihood(const Eigen::MatrixXd& z0,
                                            const ObservationBatch& x) const = 0;
  /// As log_likelihood, keeping what backward() needs.
  virtual Eigen::RowVectorXd forward(const Eigen::MatrixXd& z0,
                                     const ObservationBatch& x) = 0;
  /// Upstream dL/dlog p per column; accumulates parameter grads and returns
  /// dL/dz0.
  virtual Eigen::MatrixXd backward(const Eigen::RowVectorXd& dlogp) = 0;
  virtual ObservationBatch generate(const Eigen::MatrixXd& z0, GenerationMode mode,
                                    Rng& rng) const = 0;
  virtual ParameterList parameters() = 0;
};

/// MLP encoder for vector observations: x -> (mu, log_var).
class MlpEncoder : public Encoder {
 public:
  MlpEncoder(int obs_dim, int latent_dim, const std::vector<int>& hidden, Rng& rng);

  int latent_dim() const override { return latent_dim_; }
  Posterior posterior(const ObservationBatch& x) const override;
  Posterior forward(const ObservationBatch& x) override;
  void backward(const Eigen::MatrixXd& dmu, const Eigen::MatrixXd& dlog_var) override;
  ParameterList parameters() override;

  Mlp& network() { return net_; }

 private:
  int obs_dim_, latent_dim_;
  Mlp net_;
  Mlp::Tape tape_;
};

/// MLP mean with one learned scalar log-variance shared by all coordinates.
class GaussianDecoder : public Decoder {
 public:
  GaussianDecoder(int latent_dim, int obs_dim, const std::vector<int>& hidden,
                  Rng& rng, double init_log_var = -2.302585092994046);

  int latent_dim() const override { return latent_dim_; }
  bool is_recurrent() const override { return false; }
  Eigen::MatrixXd mean(const Eigen::MatrixXd& z0) const { return net_.forward(z0); }
  double log_var() const { return log_var_.value(0, 0); }

  Eigen::RowVectorXd log_likelihood(const Eigen::MatrixXd& z0,
                                    const ObservationBatch& x) const override;
  Eigen::RowVectorXd forward(const Eigen::MatrixXd& z0,
                             const ObservationBatch& x) override;
  Eigen::MatrixXd backward(const Eigen::RowVectorXd& dlogp) override;
  ObservationBatch generate(const Eigen::MatrixXd& z0, GenerationMode mode,
                            Rng& rng) const override;
  ParameterList parameters() override;

  Mlp& network() { return net_; }
  Parameter& log_var_parameter() { return log_var_; }

 private:
  void check(const Eigen::MatrixXd& z0, const ObservationBatch& x) const;

  int latent_dim_, obs_dim_;
  Mlp net_;
  Parameter log_var_;
  Mlp::Tape tape_;
  Eigen::MatrixXd resid_;  // x - mean of the last forward
};

/// Column-batched token ids, step-major, zero-padded past each length.
struct PaddedTokens {
  std::vector<std::vector<int>> ids;       // per step, per column (0 when padded)
  std::vector<Eigen::ArrayXXd> masks;      // per step, 1 x B
  std::vector<int> lengths;
};
PaddedTokens pad_tokens(const std::vector<std::vector<int>>& sentences,
                        bool prepend_bos, int vocab_size);
/// Embedding columns for each padded step.
std::vector<Eigen::MatrixXd> embed_token_steps(const Parameter& embed,
                                               const PaddedTokens& p);
/// Adds the top embed_dim rows of each live dxs column to the embedding grad.
void scatter_token_grad(Parameter& embed, const PaddedTokens& p,
                        const std::vector<Eigen::MatrixXd>& dxs);

/// Single-layer GRU over token embeddings; the final hidden state maps
/// linearly to (mu, log_var).
class GruEncoder : public Encoder {
 public:
  GruEncoder(int vocab_size, int latent_dim, int embed_dim, int hidden_dim, Rng& rng);

  int latent_dim() const override { return latent_dim_; }
  Posterior posterior(const ObservationBatch& x) const override;
  Posterior forward(const ObservationBatch& x) override;
  void backward(const Eigen::MatrixXd& dmu, const Eigen::MatrixXd& dlog_var) override;
  ParameterList parameters() override;

 private:
  Posterior compute(const ObservationBatch& x, PaddedTokens* pad, Gru::Tape* tape,
                    Eigen::MatrixXd* h_final) const;

  int vocab_, latent_dim_;
  Parameter embed_;
  Gru gru_;
  Linear head_;
  PaddedTokens pad_;
  Gru::Tape gru_tape_;
  Eigen::MatrixXd h_final_;
};

/// Autoregressive GRU decoder conditioned on z0: h_0 = Linear(z0), step input
/// [embed(prev token); z0], output logits = Linear(h). The first input token
/// is <bos>.
class SequenceDecoder : public Decoder {
 public:
  SequenceDecoder(int vocab_size, int latent_dim, int embed_dim, int hidden_dim,
                  Rng& rng);

  int latent_dim() const override { return latent_dim_; }
  bool is_recurrent() const override { return true; }
  int vocab_size() const { return vocab_; }

  Eigen::RowVectorXd log_likelihood(const Eigen::MatrixXd& z0,
                                    const ObservationBatch& x) const override;
  Eigen::RowVectorXd forward(const Eigen::MatrixXd& z0,
                             const ObservationBatch& x) override;
  Eigen::MatrixXd backward(const Eigen::RowVectorXd& dlogp) override;
  ObservationBatch generate(const Eigen::MatrixXd& z0, GenerationMode mode,
                            Rng& rng) const override;
  ParameterList parameters() override;

  Linear& output_layer() { return out_; }

 private:
  struct Cache {
    Eigen::MatrixXd z0;
    PaddedTokens inputs;                   // <bos> + tokens
    std::vector<std::vector<int>> targets; // per step, per column
    std::vector<Eigen::MatrixXd> states;
    std::vector<Eigen::MatrixXd> probs;    // softmax per step
    Gru::Tape tape;
    Eigen::MatrixXd h0_pre;
  };
  Eigen::RowVectorXd run(const Eigen::MatrixXd& z0, const ObservationBatch& x,
                         Cache* cache) const;
  std::vector<Eigen::MatrixXd> step_inputs(const PaddedTokens& in,
                                           const Eigen::MatrixXd& z0) const;

  int vocab_, latent_dim_;
  Parameter embed_;
  Linear init_;
  Gru gru_;
  Linear out_;
  Cache cache_;
};

/// Reparameterized draw from q(z0 | x).
struct EncodedBatch {
  Posterior post;
  Eigen::MatrixXd eps;
  Eigen::MatrixXd z0;
  Eigen::RowVectorXd log_q;
};

/// z0 = mu + exp(log_var / 2) * eps with column j drawing eps from
/// rng.split(j); log_q is the diagonal Gaussian log-density at z0.
EncodedBatch encode(const Encoder& enc, const ObservationBatch& x, const Rng& rng);
/// Single-observation form advancing rng.
struct Encoded {
  Eigen::VectorXd z0;
  double log_q;
};
Encoded encode(const Encoder& enc, const ObservationBatch& x_single, Rng& rng);

/// Diagonal Gaussian log-density per column.
Eigen::RowVectorXd gaussian_log_density(const Eigen::MatrixXd& z,
                                        const Eigen::MatrixXd& mu,
                                        const Eigen::MatrixXd& log_var);

Eigen::RowVectorXd decode_log_likelihood(const Decoder& dec, const Eigen::MatrixXd& z0,
                                         const ObservationBatch& x);

ObservationBatch generate(const Decoder& dec, const Eigen::MatrixXd& z0,
                          GenerationMode mode, Rng& rng);

}  // namespace ldebm
