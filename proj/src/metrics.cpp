#include "ldebm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "ldebm/parallel.hpp"

namespace ldebm {

namespace {

double log_mean_exp(const Eigen::ArrayXd& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v - mx).exp().mean());
}

}  // namespace

Eigen::RowVectorXd estimate_log_partition_batch(const LatentEnergy& energy,
                                                const Eigen::MatrixXd& z_next,
                                                const DiffusionSchedule& sched,
                                                std::span<const int> t, int n_samples,
                                                const Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("partition estimate needs n_samples >= 1");
  const Eigen::Index d = z_next.rows(), B = z_next.cols();
  if (static_cast<Eigen::Index>(t.size()) != B)
    throw std::invalid_argument("partition estimate: one step per column");
  const int T = sched.num_steps();
  Eigen::RowVectorXd out(B);
  const Eigen::Index per_chunk = std::max<Eigen::Index>(1, 8192 / n_samples);
  parallel_for_columns(
      B,
      [&](Eigen::Index begin, Eigen::Index end) {
        const Eigen::Index cols = end - begin;
        Eigen::MatrixXd zeta(d, cols * n_samples);
        std::vector<int> ts(cols * n_samples);
        for (Eigen::Index j = 0; j < cols; ++j) {
          const int tj = t[begin + j];
          if (tj < 0 || tj > T - 1) throw std::out_of_range("partition estimate: step outside [0, T-1]");
          const double sigma = sched.sigma(tj + 1);
          Rng col = rng.split(static_cast<std::uint64_t>(begin + j));
          for (int s = 0; s < n_samples; ++s) {
            const Eigen::Index c = j * n_samples + s;
            for (Eigen::Index i = 0; i < d; ++i)
              zeta(i, c) = (tj == T - 1 ? 0.0 : z_next(i, begin + j)) + sigma * col.normal();
            ts[c] = tj;
          }
        }
        const Eigen::RowVectorXd f = energy.energy(zeta, ts);
        for (Eigen::Index j = 0; j < cols; ++j) {
          const int tj = t[begin + j];
          const double base = 0.5 * static_cast<double>(d) *
                              std::log(2.0 * std::numbers::pi * sched.sigma_sq(tj + 1));
          out(begin + j) = base + log_mean_exp(f.segment(j * n_samples, n_samples).transpose().array());
        }
      },
      per_chunk);
  return out;
}

double estimate_log_partition(const LatentEnergy& energy, const Eigen::VectorXd& z_next,
                              const DiffusionSchedule& sched, int t, int n_samples,
                              Rng& rng) {
  const int ts[1] = {t};
  const Rng child(rng.next_u64());
  return estimate_log_partition_batch(energy, Eigen::MatrixXd(z_next), sched, ts, n_samples,
                                      child)(0);
}

Eigen::RowVectorXd log_importance_weights(const Encoder& enc, const Decoder& dec,
                                          const LatentEnergy& prior,
                                          const DiffusionSchedule& sched,
                                          const ObservationBatch& x,
                                          const ImportanceSettings& settings, const Rng& rng) {
  if (x.size() != 1) throw std::invalid_argument("importance weights: one observation at a time");
  if (settings.samples < 1) throw std::invalid_argument("importance weights: S must be >= 1");
  const int S = settings.samples;
  const int T = sched.num_steps();
  const Posterior post = enc.posterior(x);
  const Eigen::Index d = post.mu.rows();
  const double log2pi = std::log(2.0 * std::numbers::pi);

  Eigen::MatrixXd z(d, S);
  const Rng eps_rng = rng.split(0), traj_rng = rng.split(1), part_rng = rng.split(2);
  for (int s = 0; s < S; ++s) {
    Rng col = eps_rng.split(static_cast<std::uint64_t>(s));
    for (Eigen::Index i = 0; i < d; ++i)
      z(i, s) = post.mu(i, 0) + std::exp(0.5 * post.log_var(i, 0)) * col.normal();
  }
  const Eigen::MatrixXd mu = post.mu.replicate(1, S), lv = post.log_var.replicate(1, S);
  Eigen::RowVectorXd logw = dec.log_likelihood(z, x.select(std::vector<int>(S, 0))) -
                            gaussian_log_density(z, mu, lv);

  std::vector<Rng> traj(S, Rng(0));
  for (int s = 0; s < S; ++s) traj[s] = traj_rng.split(static_cast<std::uint64_t>(s));
  for (int t = 0; t < T; ++t) {
    const double var = sched.sigma_sq(t + 1);
    const double a = std::sqrt(1.0 - var);
    const Eigen::MatrixXd z_tilde = a * z;
    Eigen::MatrixXd z_next = z_tilde;
    for (int s = 0; s < S; ++s)
      for (Eigen::Index i = 0; i < d; ++i) z_next(i, s) += std::sqrt(var) * traj[s].normal();
    const std::vector<int> ts(S, t);
    const Eigen::RowVectorXd cond =
        conditional_log_density_batch(prior, z_tilde, z_next, sched, ts, nullptr);
    const Eigen::RowVectorXd log_z = estimate_log_partition_batch(
        prior, z_next, sched, ts, settings.partition_samples,
        part_rng.split(static_cast<std::uint64_t>(t)));
    // p(z_t | z_{t+1}) = p(z~_t | z_{t+1}) a^d
    logw += cond - log_z;
    logw.array() += 0.5 * static_cast<double>(d) * std::log(1.0 - var);
    // q(z_{t+1} | z_t)
    logw.array() += 0.5 * static_cast<double>(d) * (log2pi + std::log(var));
    logw += (z_next - z_tilde).colwise().squaredNorm() / (2.0 * var);
    z = z_next;
  }
  logw.array() += -0.5 * static_cast<double>(d) * log2pi - 0.5 * z.colwise().squaredNorm().array();
  return logw;
}

double nll_importance(const Encoder& enc, const Decoder& dec, const LatentEnergy& prior,
                      const DiffusionSchedule& sched, const ObservationBatch& x,
                      const ImportanceSettings& settings, const Rng& rng) {
  const Eigen::RowVectorXd logw = log_importance_weights(enc, dec, prior, sched, x, settings, rng);
  return -log_mean_exp(logw.transpose().array());
}

double elbo(const Encoder& enc, const Decoder& dec, const LatentEnergy& prior,
            const DiffusionSchedule& sched, const ObservationBatch& x,
            const ImportanceSettings& settings, const Rng& rng) {
  return log_importance_weights(enc, dec, prior, sched, x, settings, rng).mean();
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts ngrams(const std::vector<std::string>& s, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= s.size(); ++i)
    ++out[std::vector<std::string>(s.begin() + i, s.begin() + i + n)];
  return out;
}

}  // namespace

double bleu(const std::vector<std::vector<std::string>>& references,
            const std::vector<std::vector<std::string>>& hypotheses) {
  if (references.empty()) throw std::invalid_argument("bleu: empty reference corpus");
  constexpr std::size_t kMaxN = 4;
  std::vector<NgramCounts> max_ref(kMaxN + 1);
  std::vector<std::size_t> ref_lengths;
  for (const auto& r : references) {
    ref_lengths.push_back(r.size());
    for (std::size_t n = 1; n <= kMaxN; ++n)
      for (const auto& [g, c] : ngrams(r, n)) max_ref[n][g] = std::max(max_ref[n][g], c);
  }
  std::vector<double> matched(kMaxN + 1, 0.0), total(kMaxN + 1, 0.0);
  double hyp_len = 0.0, ref_len = 0.0;
  for (const auto& h : hypotheses) {
    hyp_len += static_cast<double>(h.size());
    // closest reference length, ties to the shorter
    std::size_t best = ref_lengths.front();
    for (std::size_t L : ref_lengths) {
      const auto dist = [&](std::size_t v) {
        return v > h.size() ? v - h.size() : h.size() - v;
      };
      if (dist(L) < dist(best) || (dist(L) == dist(best) && L < best)) best = L;
    }
    ref_len += static_cast<double>(best);
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      for (const auto& [g, c] : ngrams(h, n)) {
        auto it = max_ref[n].find(g);
        matched[n] += std::min(c, it == max_ref[n].end() ? 0 : it->second);
        total[n] += c;
      }
    }
  }
  if (hyp_len == 0.0) return 0.0;
  double log_p = 0.0;
  for (std::size_t n = 1; n <= kMaxN; ++n) {
    if (matched[n] == 0.0) return 0.0;
    log_p += std::log(matched[n] / total[n]) / static_cast<double>(kMaxN);
  }
  const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return 100.0 * bp * std::exp(log_p);
}

double word_kl(const std::vector<std::vector<std::string>>& reference,
               const std::vector<std::vector<std::string>>& generated) {
  if (reference.empty() || generated.empty())
    throw std::invalid_argument("word_kl: empty corpus");
  std::map<std::string, std::pair<double, double>> counts;
  double n_ref = 0.0, n_gen = 0.0;
  for (const auto& s : reference)
    for (const auto& w : s) {
      counts[w].first += 1.0;
      n_ref += 1.0;
    }
  for (const auto& s : generated)
    for (const auto& w : s) {
      counts[w].second += 1.0;
      n_gen += 1.0;
    }
  const double V = static_cast<double>(counts.size());
  if (V == 0.0) return 0.0;
  double kl = 0.0;
  for (const auto& [w, c] : counts) {
    const double p = (c.first + 1.0) / (n_ref + V);
    const double q = (c.second + 1.0) / (n_gen + V);
    kl += p * std::log(p / q);
  }
  return std::max(kl, 0.0);
}

double homogeneity(const std::vector<int>& true_labels, const std::vector<int>& predicted) {
  if (true_labels.size() != predicted.size())
    throw std::invalid_argument("homogeneity: label vectors differ in length");
  if (true_labels.empty()) throw std::invalid_argument("homogeneity: no labels");
  const double N = static_cast<double>(true_labels.size());
  std::map<int, double> class_count, cluster_count;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < true_labels.size(); ++i) {
    class_count[true_labels[i]] += 1.0;
    cluster_count[predicted[i]] += 1.0;
    joint[{true_labels[i], predicted[i]}] += 1.0;
  }
  double h_c = 0.0;
  for (const auto& [c, n] : class_count) h_c -= (n / N) * std::log(n / N);
  if (h_c <= 0.0) return 1.0;
  double h_c_given_k = 0.0;
  for (const auto& [ck, n] : joint) h_c_given_k -= (n / N) * std::log(n / cluster_count[ck.second]);
  return 1.0 - h_c_given_k / h_c;
}

ModeCoverage mode_coverage(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& centers,
                           double radius) {
  if (samples.cols() < 1) throw std::invalid_argument("mode_coverage: no samples");
  if (samples.rows() != centers.rows())
    throw std::invalid_argument("mode_coverage: dimension mismatch");
  ModeCoverage out;
  out.histogram.assign(centers.cols(), 0);
  const double r2 = radius * radius;
  for (Eigen::Index i = 0; i < samples.cols(); ++i) {
    Eigen::Index best = 0;
    const double d2 = (centers.colwise() - samples.col(i)).colwise().squaredNorm().minCoeff(&best);
    if (d2 <= r2) ++out.histogram[best];
  }
  const double threshold = 0.005 * static_cast<double>(samples.cols());
  for (int c : out.histogram)
    if (c >= threshold) ++out.covered;
  return out;
}

double corpus_mutual_information(const EnergyModel& model, const Encoder& enc,
                                 const DiffusionSchedule& sched, const ObservationBatch& data) {
  const Eigen::Index N = data.size();
  Eigen::MatrixXd probs(model.num_classes(), N);
  constexpr Eigen::Index kChunk = 1000;
  for (Eigen::Index b = 0; b < N; b += kChunk) {
    const Eigen::Index n = std::min(kChunk, N - b);
    std::vector<int> idx(n);
    for (Eigen::Index i = 0; i < n; ++i) idx[i] = static_cast<int>(b + i);
    probs.middleCols(b, n) = classify_batch(model, sched, enc.posterior(data.select(idx)).mu);
  }
  const Eigen::VectorXd marginal = probs.rowwise().mean();
  auto entropy = [](const Eigen::VectorXd& p) {
    double h = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k)
      if (p(k) > 0.0) h -= p(k) * std::log(p(k));
    return h;
  };
  double cond = 0.0;
  for (Eigen::Index j = 0; j < N; ++j) cond += entropy(probs.col(j));
  return entropy(marginal) - cond / static_cast<double>(N);
}

void EvalReport::add(const std::string& name, double value, const std::string& settings_json) {
  entries_.push_back({name, value, settings_json});
}

const EvalReport::Entry* EvalReport::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["seed"] = seed_;
  if (!config_hash_.empty()) j["config_hash"] = config_hash_;
  j["metrics"] = nlohmann::json::array();
  for (const auto& e : entries_)
    j["metrics"].push_back({{"name", e.name},
                            {"value", e.value},
                            {"settings", nlohmann::json::parse(e.settings)}});
  return j.dump(2);
}

}  // namespace ldebm
