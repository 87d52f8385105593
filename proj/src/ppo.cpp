#include "teachgen/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "teachgen/error.hpp"
#include "teachgen/retrieval.hpp"

namespace teachgen {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

double mean_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

int argmax_finite(std::span<const double> logp) {
  int best = -1;
  for (std::size_t i = 0; i < logp.size(); ++i)
    if (std::isfinite(logp[i]) && (best < 0 || logp[i] > logp[best]))
      best = static_cast<int>(i);
  return best;
}

// Samples from the k most likely entries of logp (all when k == 0).
int sample_top_k(std::span<const double> logp, std::size_t k, std::mt19937_64& rng) {
  if (k == 0 || k >= logp.size()) return sample_from_logp(logp, rng);
  std::vector<std::size_t> order(logp.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return logp[a] > logp[b]; });
  std::vector<double> kept(logp.size(), kNegInf);
  double mass = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    kept[order[r]] = logp[order[r]];
    if (std::isfinite(logp[order[r]])) mass += std::exp(logp[order[r]]);
  }
  const double log_mass = std::log(mass);
  for (auto& lp : kept)
    if (std::isfinite(lp)) lp -= log_mass;
  return sample_from_logp(kept, rng);
}

struct MinibatchResult {
  double loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  std::size_t clipped = 0;
};

MinibatchResult policy_pass(const SequencePolicy& policy,
                            std::span<const PolicyLossToken> tokens, double clip_range,
                            double ent_coef, std::span<double> grad) {
  MinibatchResult r;
  const std::size_t n = tokens.size();
  if (n == 0) return r;
  const auto vocab = policy.vocab_size();
  const int eos = policy.eos_token();
  std::vector<double> z(vocab), logp(vocab);
  std::vector<double> logp_new(n), logp_old(n), adv(n), entropies(n);
  std::vector<std::vector<double>> all_logp;
  if (!grad.empty()) all_logp.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& tok = tokens[i];
    policy.logits(tok.prefix, z);
    masked_log_softmax(z, tok.eos_banned ? eos : -1, logp);
    logp_new[i] = logp[static_cast<std::size_t>(tok.action)];
    logp_old[i] = tok.logp_old;
    adv[i] = tok.advantage;
    entropies[i] = entropy_of(logp);
    if (!grad.empty()) all_logp.push_back(logp);
  }
  const double mean_entropy = mean_of(entropies);
  const auto surrogate = clipped_surrogate(logp_new, logp_old, adv, clip_range);
  r.loss = -mean_of(surrogate.objective) - ent_coef * mean_entropy;
  r.entropy = mean_entropy;
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) kl += logp_old[i] - logp_new[i];
  r.approx_kl = kl / static_cast<double>(n);
  r.clipped = static_cast<std::size_t>(
      std::count(surrogate.clipped.begin(), surrogate.clipped.end(), true));

  if (grad.empty()) return r;
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> dz(vocab);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& lp = all_logp[i];
    const double h = entropies[i];
    const double c = -inv_n * surrogate.dobjective_dlogp[i];
    for (std::size_t j = 0; j < vocab; ++j) {
      if (!std::isfinite(lp[j])) {
        dz[j] = 0.0;
        continue;
      }
      const double p = std::exp(lp[j]);
      // d logp_a / dz_j = [j == a] - p_j;  dH / dz_j = -p_j (log p_j + H)
      dz[j] = -c * p + ent_coef * inv_n * p * (lp[j] + h);
    }
    dz[static_cast<std::size_t>(tokens[i].action)] += c;
    policy.accumulate_policy_grad(tokens[i].prefix, dz, grad);
  }
  return r;
}

std::vector<PolicyLossToken> flatten(const std::vector<Trajectory>& batch,
                                     std::size_t min_length, int eos,
                                     std::span<const double> advantages) {
  std::vector<PolicyLossToken> out;
  std::size_t k = 0;
  for (const auto& tr : batch) {
    std::vector<int> prefix = tr.prompt_tokens;
    for (std::size_t t = 0; t < tr.size(); ++t) {
      out.push_back({prefix, tr.action_tokens[t], tr.behavior_logprobs[t], advantages[k++],
                     eos >= 0 && t < min_length});
      prefix.push_back(tr.action_tokens[t]);
    }
  }
  return out;
}

}  // namespace

void PPOConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("ppo config: " + msg); };
  if (n_envs != 1) fail("n_envs must be 1");
  if (max_prompt_length == 0) fail("max_prompt_length must be > 0");
  if (max_episode_length == 0) fail("max_episode_length must be > 0");
  if (prompt_truncation_side != "right" && prompt_truncation_side != "left")
    fail("prompt_truncation_side must be 'left' or 'right'");
  if (n_steps == 0) fail("n_steps must be > 0");
  if (batch_size == 0) fail("batch_size must be > 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    fail("learning_rate must be positive");
  if (!(clip_range > 0.0)) fail("clip_range must be > 0");
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must be in [0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail("gae_lambda must be in [0, 1]");
  if (!(ent_coef >= 0.0)) fail("ent_coef must be >= 0");
  if (!(kl_coeff >= 0.0)) fail("kl_coeff must be >= 0");
  if (!(target_kl > 0.0)) fail("target_kl must be > 0");
  if (max_new_tokens == 0) fail("max_new_tokens must be > 0");
  if (eval_every == 0) fail("eval_every must be > 0");
  if (save_every == 0) fail("save_every must be > 0");
  if (eval_num_beams == 0) fail("eval num_beams must be > 0");
}

std::string default_prompt_format(const DialogueSample& sample) {
  return render_context(sample) + "\n[teacher] ";
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      double bootstrap_value, double gamma, double lambda) {
  if (rewards.size() != values.size())
    throw TrainingError("compute_gae: rewards and values differ in length");
  if (rewards.empty()) throw TrainingError("compute_gae: empty trajectory");
  if (!all_finite(rewards) || !all_finite(values) || !std::isfinite(bootstrap_value) ||
      !std::isfinite(gamma) || !std::isfinite(lambda))
    throw TrainingError("compute_gae: non-finite input");
  const std::size_t n = rewards.size();
  GaeResult out{std::vector<double>(n), std::vector<double>(n)};
  double next_value = bootstrap_value;
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double delta = rewards[i] + gamma * next_value - values[i];
    next_adv = delta + gamma * lambda * next_adv;
    out.advantages[i] = next_adv;
    out.returns[i] = next_adv + values[i];
    next_value = values[i];
  }
  return out;
}

ClippedSurrogate clipped_surrogate(std::span<const double> logp_new,
                                   std::span<const double> logp_old,
                                   std::span<const double> advantages, double clip_range) {
  const std::size_t n = logp_new.size();
  if (logp_old.size() != n || advantages.size() != n)
    throw TrainingError("clipped objective: inputs differ in length");
  ClippedSurrogate s;
  s.ratios.resize(n);
  s.objective.resize(n);
  s.dobjective_dlogp.resize(n);
  s.clipped.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double rho = std::exp(logp_new[i] - logp_old[i]);
    const double a = advantages[i];
    const double unclipped = rho * a;
    const double clipped = std::clamp(rho, 1.0 - clip_range, 1.0 + clip_range) * a;
    s.ratios[i] = rho;
    if (clipped < unclipped) {
      s.objective[i] = clipped;
      s.dobjective_dlogp[i] = 0.0;
      s.clipped[i] = true;
    } else {
      s.objective[i] = unclipped;
      s.dobjective_dlogp[i] = unclipped;
      s.clipped[i] = false;
    }
  }
  return s;
}

double clipped_policy_objective(std::span<const double> logp_new,
                                std::span<const double> logp_old,
                                std::span<const double> advantages, double clip_range,
                                double ent_coef, double entropy) {
  const auto s = clipped_surrogate(logp_new, logp_old, advantages, clip_range);
  return -mean_of(s.objective) - ent_coef * entropy;
}

double policy_minibatch_loss(const SequencePolicy& policy,
                             std::span<const PolicyLossToken> tokens, double clip_range,
                             double ent_coef, std::span<double> grad) {
  return policy_pass(policy, tokens, clip_range, ent_coef, grad).loss;
}

nlohmann::json UpdateStats::to_json() const {
  return {{"policy_loss", policy_loss},
          {"value_loss", value_loss},
          {"value_loss_per_epoch", value_loss_per_epoch},
          {"entropy", entropy},
          {"approx_kl", approx_kl},
          {"clip_fraction", clip_fraction},
          {"mean_reward", mean_reward},
          {"mean_reference_kl", mean_reference_kl},
          {"minibatches_applied", minibatches_applied},
          {"early_stopped", early_stopped},
          {"aborted", aborted}};
}

RolloutBatch collect_rollouts(const SequencePolicy& policy, const SequencePolicy& reference,
                              const std::vector<DialogueSample>& datapool,
                              const RewardFn& reward, const PPOConfig& config,
                              std::mt19937_64& rng, const PromptFormatter& format) {
  if (datapool.empty()) throw TrainingError("collect_rollouts: empty datapool");
  if (!reward) throw TrainingError("collect_rollouts: no reward function");
  const auto vocab = policy.vocab_size();
  const int eos = policy.eos_token();
  const std::size_t horizon = std::min(config.max_episode_length, config.max_new_tokens);
  std::vector<double> z(vocab), logp(vocab), ref_logp(vocab);
  RolloutBatch batch;

  while (batch.total_actions < config.n_steps) {
    const auto& sample = datapool[std::uniform_int_distribution<std::size_t>(
        0, datapool.size() - 1)(rng)];
    Trajectory tr;
    tr.sample_id = sample.id;
    tr.prompt_tokens = policy.encode(format(sample));
    if (tr.prompt_tokens.size() > config.max_prompt_length) {
      const auto excess = static_cast<std::ptrdiff_t>(tr.prompt_tokens.size() -
                                                      config.max_prompt_length);
      if (config.prompt_truncation_side == "right")
        tr.prompt_tokens.erase(tr.prompt_tokens.end() - excess, tr.prompt_tokens.end());
      else
        tr.prompt_tokens.erase(tr.prompt_tokens.begin(), tr.prompt_tokens.begin() + excess);
    }
    std::vector<int> prefix = tr.prompt_tokens;

    for (std::size_t t = 0; t < horizon; ++t) {
      const int banned = t < config.min_length ? eos : -1;
      policy.logits(prefix, z);
      masked_log_softmax(z, banned, logp);
      const int action = config.do_sample ? sample_top_k(logp, config.top_k, rng)
                                          : argmax_finite(logp);
      const double lp = logp[static_cast<std::size_t>(action)];
      if (!std::isfinite(lp))
        throw TrainingError("policy chose token " + std::to_string(action) +
                            " with zero probability at step " + std::to_string(t) +
                            " of sample '" + sample.id + "'");
      reference.logits(prefix, z);
      masked_log_softmax(z, banned, ref_logp);
      double kl = 0.0;
      for (std::size_t v = 0; v < vocab; ++v)
        if (std::isfinite(logp[v])) kl += std::exp(logp[v]) * (logp[v] - ref_logp[v]);

      tr.values.push_back(policy.value(prefix));
      tr.action_tokens.push_back(action);
      tr.behavior_logprobs.push_back(lp);
      tr.reference_logprobs.push_back(ref_logp[static_cast<std::size_t>(action)]);
      tr.reference_kl.push_back(kl);
      tr.shaped_rewards.push_back(-config.kl_coeff * (lp - tr.reference_logprobs.back()));
      prefix.push_back(action);
      if (action == eos) {
        tr.ended_with_eos = true;
        if (config.terminate_on_eos) break;
      }
    }

    tr.decoded_text = policy.decode(tr.action_tokens);
    tr.terminal_reward = reward(sample, tr.decoded_text);
    if (!std::isfinite(tr.terminal_reward))
      throw TrainingError("non-finite reward for sample '" + sample.id + "'");
    tr.shaped_rewards.back() += tr.terminal_reward;
    auto gae = compute_gae(tr.shaped_rewards, tr.values, 0.0, config.gamma, config.gae_lambda);
    tr.advantages = std::move(gae.advantages);
    tr.returns = std::move(gae.returns);
    batch.total_actions += tr.size();
    batch.trajectories.push_back(std::move(tr));
  }
  return batch;
}

UpdateStats ppo_update(const std::vector<Trajectory>& batch, SequencePolicy& policy,
                       PPOOptimizers& optimizers, const PPOConfig& config,
                       std::mt19937_64& rng) {
  UpdateStats stats;
  if (batch.empty()) return stats;

  std::vector<double> advantages;
  std::vector<double> rewards, ref_kls;
  for (const auto& tr : batch) {
    if (tr.advantages.size() != tr.size() || tr.returns.size() != tr.size() ||
        tr.behavior_logprobs.size() != tr.size() || tr.values.size() != tr.size())
      throw TrainingError("trajectory '" + tr.sample_id + "' has inconsistent lengths");
    advantages.insert(advantages.end(), tr.advantages.begin(), tr.advantages.end());
    rewards.push_back(tr.terminal_reward);
    ref_kls.push_back(std::accumulate(tr.reference_kl.begin(), tr.reference_kl.end(), 0.0));
  }
  stats.mean_reward = mean_of(rewards);
  stats.mean_reference_kl = mean_of(ref_kls);

  if (config.normalize_advantages && advantages.size() > 1) {
    const double mu = mean_of(advantages);
    double var = 0.0;
    for (double a : advantages) var += (a - mu) * (a - mu);
    const double sd = std::sqrt(var / static_cast<double>(advantages.size()));
    for (auto& a : advantages) a = sd > 1e-12 ? (a - mu) / sd : a - mu;
  }

  const auto tokens = flatten(batch, config.min_length, policy.eos_token(), advantages);
  const std::size_t n = tokens.size();
  const auto params = policy.policy_parameters();
  const auto vparams = policy.value_parameters();
  const std::vector<double> entry_policy(params.begin(), params.end());
  const std::vector<double> entry_value(vparams.begin(), vparams.end());
  auto abort = [&] {
    std::copy(entry_policy.begin(), entry_policy.end(), params.begin());
    std::copy(entry_value.begin(), entry_value.end(), vparams.begin());
    stats.aborted = true;
    return stats;
  };

  std::vector<std::size_t> order(n);
  std::vector<double> grad(params.size());
  std::vector<PolicyLossToken> mb;
  double loss_sum = 0.0, ent_sum = 0.0, kl_sum = 0.0;
  std::size_t clipped = 0, seen = 0, passes = 0;

  for (std::size_t epoch = 0; epoch < config.n_epochs && !stats.early_stopped; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      mb.clear();
      for (std::size_t i = start; i < end; ++i) mb.push_back(tokens[order[i]]);
      std::fill(grad.begin(), grad.end(), 0.0);
      const auto r = policy_pass(policy, mb, config.clip_range, config.ent_coef, grad);
      ++passes;
      loss_sum += r.loss;
      ent_sum += r.entropy;
      kl_sum += r.approx_kl;
      clipped += r.clipped;
      seen += mb.size();
      if (r.approx_kl > config.target_kl) {
        stats.early_stopped = true;
        break;
      }
      if (!std::isfinite(r.loss) || !all_finite(grad)) return abort();
      optimizers.policy.step(params, grad, config.learning_rate);
      ++stats.minibatches_applied;
    }
  }
  if (passes > 0) {
    stats.policy_loss = loss_sum / static_cast<double>(passes);
    stats.entropy = ent_sum / static_cast<double>(passes);
    stats.approx_kl = kl_sum / static_cast<double>(passes);
    stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(seen);
  }

  std::vector<std::vector<int>> prefixes;
  std::vector<double> targets;
  for (const auto& tr : batch) {
    std::vector<int> prefix = tr.prompt_tokens;
    for (std::size_t t = 0; t < tr.size(); ++t) {
      prefixes.push_back(prefix);
      targets.push_back(tr.returns[t]);
      prefix.push_back(tr.action_tokens[t]);
    }
  }
  std::vector<double> vgrad(vparams.size());
  for (std::size_t epoch = 0; epoch < config.value_update_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      std::fill(vgrad.begin(), vgrad.end(), 0.0);
      double loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const auto& prefix = prefixes[order[i]];
        const double err = policy.value(prefix) - targets[order[i]];
        loss += err * err * inv;
        policy.accumulate_value_grad(prefix, 2.0 * err * inv, vgrad);
      }
      if (!std::isfinite(loss) || !all_finite(vgrad)) return abort();
      optimizers.value.step(vparams, vgrad, config.learning_rate);
      epoch_loss += loss;
      ++batches;
    }
    stats.value_loss_per_epoch.push_back(batches ? epoch_loss / static_cast<double>(batches)
                                                 : 0.0);
  }
  stats.value_loss = mean_of(stats.value_loss_per_epoch);
  return stats;
}

namespace {

Checkpoint policy_checkpoint(SequencePolicy& policy, std::size_t iteration) {
  const auto p = policy.policy_parameters();
  const auto v = policy.value_parameters();
  Checkpoint cp;
  cp.manifest = {{"kind", "ppo"},
                 {"iteration", iteration},
                 {"policy_weights", p.size()},
                 {"value_weights", v.size()}};
  cp.weights.assign(p.begin(), p.end());
  cp.weights.insert(cp.weights.end(), v.begin(), v.end());
  return cp;
}

void restore_policy(SequencePolicy& policy, const Checkpoint& cp) {
  const auto p = policy.policy_parameters();
  const auto v = policy.value_parameters();
  if (cp.weights.size() != p.size() + v.size())
    throw TrainingError("checkpoint size does not match the policy");
  std::copy_n(cp.weights.begin(), p.size(), p.begin());
  std::copy(cp.weights.begin() + static_cast<std::ptrdiff_t>(p.size()), cp.weights.end(),
            v.begin());
}

EvalRecord evaluate_policy(const SequencePolicy& policy,
                           const std::vector<DialogueSample>& pool, const RewardFn& reward,
                           const PPOConfig& config, const PromptFormatter& format,
                           std::size_t iteration) {
  EvalRecord rec;
  rec.iteration = iteration;
  const BeamSearchOptions beam{config.eval_num_beams, config.eval_min_length,
                               config.eval_max_new_tokens, 1.0};
  const std::size_t count = std::min(pool.size(), config.eval_batch_size);
  double total = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    auto prompt = policy.encode(format(pool[i]));
    if (prompt.size() > config.max_prompt_length) prompt.resize(config.max_prompt_length);
    const auto out = beam_search(policy, prompt, beam);
    rec.generations.push_back(policy.decode(out));
    total += reward(pool[i], rec.generations.back());
  }
  rec.mean_reward = count ? total / static_cast<double>(count) : 0.0;
  return rec;
}

}  // namespace

RunArtifacts train_rl(SequencePolicy& policy, const std::vector<DialogueSample>& datapool,
                      const RewardFn& reward, const PPOConfig& config,
                      const RLRunOptions& options) {
  config.validate();
  if (datapool.empty()) throw TrainingError("train_rl: empty datapool");
  namespace fs = std::filesystem;
  const auto reference = policy.clone_policy();
  PPOOptimizers optimizers{AdamW(config.adamw), AdamW(config.adamw)};
  std::mt19937_64 rng(config.seed);
  const auto& eval_pool = options.eval_pool.empty() ? datapool : options.eval_pool;
  RunArtifacts run;
  Checkpoint last_good = policy_checkpoint(policy, 0);

  std::ofstream stats_log, eval_log;
  if (!options.run_dir.empty()) {
    fs::create_directories(options.run_dir);
    stats_log.open(fs::path(options.run_dir) / "stats.jsonl");
    eval_log.open(fs::path(options.run_dir) / "eval.csv");
    if (!stats_log || !eval_log)
      throw Error("cannot write run artifacts under " + options.run_dir);
    eval_log << "iteration,mean_reward\n";
  }

  for (std::size_t it = 1; it <= config.n_iters; ++it) {
    auto rollouts = collect_rollouts(policy, *reference, datapool, reward, config, rng,
                                     options.format);
    auto stats = ppo_update(rollouts.trajectories, policy, optimizers, config, rng);
    if (stats.aborted) {
      restore_policy(policy, last_good);
      optimizers.policy.reset();
      optimizers.value.reset();
    }
    if (stats_log.is_open()) {
      auto j = stats.to_json();
      j["iteration"] = it;
      stats_log << j.dump() << '\n';
    }
    if (options.on_iteration) options.on_iteration(it, stats);
    run.iterations.push_back(std::move(stats));

    if (it % config.eval_every == 0) {
      auto rec = evaluate_policy(policy, eval_pool, reward, config, options.format, it);
      if (eval_log.is_open()) eval_log << it << ',' << rec.mean_reward << '\n';
      run.evaluations.push_back(std::move(rec));
    }
    if (it % config.save_every == 0) {
      RLCheckpointRecord rec{it, "", policy_checkpoint(policy, it)};
      if (!options.run_dir.empty()) {
        rec.path = (fs::path(options.run_dir) / ("checkpoint-iter-" + std::to_string(it)))
                       .string();
        save_checkpoint(rec.checkpoint, rec.path);
      }
      last_good = rec.checkpoint;
      run.checkpoints.push_back(std::move(rec));
    }
  }
  return run;
}

}  // namespace teachgen
