#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "teachgen/corpus.hpp"
#include "teachgen/optim.hpp"
#include "teachgen/policy.hpp"
#include "teachgen/sft.hpp"

namespace teachgen {

/// PPO run settings. Field defaults follow the reference RL fine-tuning
/// configuration (env / alg / kl_div / generation / train_evaluation).
struct PPOConfig {
  // env
  std::size_t n_envs = 1;
  std::size_t max_prompt_length = 100;
  std::size_t max_episode_length = 20;
  bool terminate_on_eos = true;
  int context_start_token = 0;
  std::string prompt_truncation_side = "right";

  // alg
  std::string alg_id = "ppo_separate";
  std::size_t n_steps = 20;
  std::size_t batch_size = 64;
  int verbose = 1;
  double learning_rate = 1e-6;
  double clip_range = 0.2;
  std::size_t n_epochs = 1;
  std::size_t value_update_epochs = 3;
  double gae_lambda = 0.95;
  double gamma = 0.99;
  double ent_coef = 0.01;
  double kl_coeff = 0.001;
  double target_kl = 2.0;

  // policy
  std::string policy_id = "seq2seq_lm_actor_critic_policy";
  std::string policy_model_name = "google/flan-t5-small";
  bool apply_model_parallel = true;
  bool do_sample = true;
  std::size_t top_k = 0;
  std::size_t min_length = 9;
  std::size_t max_new_tokens = 20;

  // train_evaluation
  std::size_t eval_batch_size = 64;
  std::size_t n_iters = 200;
  std::size_t eval_every = 20;
  std::size_t save_every = 10;
  std::size_t eval_num_beams = 5;
  std::size_t eval_min_length = 9;
  std::size_t eval_max_new_tokens = 20;

  // Not part of the reference file.
  bool normalize_advantages = true;
  AdamWConfig adamw;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Trajectory {
  std::string sample_id;
  std::vector<int> prompt_tokens;
  std::vector<int> action_tokens;
  std::vector<double> behavior_logprobs;
  std::vector<double> reference_logprobs;
  /// Exact KL(policy || reference) of the action distribution at each state.
  std::vector<double> reference_kl;
  std::vector<double> values;
  std::vector<double> shaped_rewards;
  std::vector<double> advantages;
  std::vector<double> returns;
  double terminal_reward = 0.0;
  std::string decoded_text;
  bool ended_with_eos = false;

  std::size_t size() const { return action_tokens.size(); }
};

/// Scores a decoded generation for the sample it was prompted from.
using RewardFn = std::function<double(const DialogueSample& sample, std::string_view text)>;
/// Renders a sample into the prompt text fed to the policy.
using PromptFormatter = std::function<std::string(const DialogueSample& sample)>;

/// Speaker-tagged context followed by an open teacher turn.
std::string default_prompt_format(const DialogueSample& sample);

struct RolloutBatch {
  std::vector<Trajectory> trajectories;
  std::size_t total_actions = 0;
};

/// Samples whole episodes until at least n_steps actions are collected.
/// Per-token shaped reward is -kl_coeff * (log pi - log pi_ref), plus the
/// terminal reward on the final action. Advantages and returns are filled
/// with compute_gae before returning.
RolloutBatch collect_rollouts(const SequencePolicy& policy, const SequencePolicy& reference,
                              const std::vector<DialogueSample>& datapool,
                              const RewardFn& reward, const PPOConfig& config,
                              std::mt19937_64& rng,
                              const PromptFormatter& format = default_prompt_format);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// delta_t = r_t + gamma V_{t+1} - V_t with V_T = bootstrap_value;
/// A_t = delta_t + gamma lambda A_{t+1}; returns = A + V.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      double bootstrap_value, double gamma, double lambda);

/// Per-token clipped surrogate terms and their derivative with respect to
/// the new log-probability.
struct ClippedSurrogate {
  std::vector<double> ratios;
  std::vector<double> objective;
  std::vector<double> dobjective_dlogp;
  /// Tokens where the clipped branch is strictly smaller (zero gradient).
  std::vector<bool> clipped;
};

ClippedSurrogate clipped_surrogate(std::span<const double> logp_new,
                                   std::span<const double> logp_old,
                                   std::span<const double> advantages, double clip_range);

/// -mean(min(rho A, clip(rho, 1-eps, 1+eps) A)) - ent_coef * entropy
double clipped_policy_objective(std::span<const double> logp_new,
                                std::span<const double> logp_old,
                                std::span<const double> advantages, double clip_range,
                                double ent_coef, double entropy);

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  std::vector<double> value_loss_per_epoch;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double mean_reward = 0.0;
  double mean_reference_kl = 0.0;
  std::size_t minibatches_applied = 0;
  bool early_stopped = false;
  bool aborted = false;

  nlohmann::json to_json() const;
};

struct PPOOptimizers {
  AdamW policy;
  AdamW value;
};

/// Normalizes advantages (optional), runs n_epochs clipped-objective passes
/// over shuffled minibatches, skipping the rest once a minibatch's approx_kl
/// exceeds target_kl, then value_update_epochs squared-error passes on the
/// value head. A non-finite gradient restores the parameters held at entry
/// and returns with aborted set.
UpdateStats ppo_update(const std::vector<Trajectory>& batch, SequencePolicy& policy,
                       PPOOptimizers& optimizers, const PPOConfig& config,
                       std::mt19937_64& rng);

/// Loss of the policy minibatch objective for fixed tokens, exposed for
/// gradient checks: returns the loss and (when grad is non-empty) adds its
/// gradient with respect to the policy parameters.
struct PolicyLossToken {
  std::vector<int> prefix;
  int action = 0;
  double logp_old = 0.0;
  double advantage = 0.0;
  bool eos_banned = false;
};

double policy_minibatch_loss(const SequencePolicy& policy,
                             std::span<const PolicyLossToken> tokens, double clip_range,
                             double ent_coef, std::span<double> grad);

struct EvalRecord {
  std::size_t iteration = 0;
  double mean_reward = 0.0;
  std::vector<std::string> generations;
};

struct RLCheckpointRecord {
  std::size_t iteration = 0;
  std::string path;
  Checkpoint checkpoint;
};

struct RunArtifacts {
  std::vector<UpdateStats> iterations;
  std::vector<EvalRecord> evaluations;
  std::vector<RLCheckpointRecord> checkpoints;
};

struct RLRunOptions {
  std::vector<DialogueSample> eval_pool;
  PromptFormatter format = default_prompt_format;
  /// When set, stats.jsonl, eval.csv and checkpoint directories go here.
  std::string run_dir;
  std::function<void(std::size_t, const UpdateStats&)> on_iteration;
};

/// n_iters rollout/update iterations against `reward`, beam-search
/// evaluation every eval_every iterations and a checkpoint every save_every.
/// The reference policy is a frozen copy of `policy` at entry.
RunArtifacts train_rl(SequencePolicy& policy, const std::vector<DialogueSample>& datapool,
                      const RewardFn& reward, const PPOConfig& config,
                      const RLRunOptions& options = {});

}  // namespace teachgen
