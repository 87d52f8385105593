#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <numeric>

#include "helpers.hpp"
#include "teachgen/error.hpp"
#include "teachgen/ppo.hpp"
#include "teachgen/tiny_lm.hpp"

using namespace teachgen;

namespace {

// A_t = sum_l (gamma lambda)^l delta_{t+l}, summed directly.
std::vector<double> direct_gae(const std::vector<double>& r, const std::vector<double>& v,
                               double boot, double g, double l) {
  const std::size_t n = r.size();
  std::vector<double> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    long double a = 0, w = 1;
    for (std::size_t k = t; k < n; ++k) {
      const double next = k + 1 < n ? v[k + 1] : boot;
      a += w * (r[k] + g * next - v[k]);
      w *= g * l;
    }
    out[t] = static_cast<double>(a);
  }
  return out;
}

std::vector<DialogueSample> prompts(std::size_t n) {
  std::vector<DialogueSample> pool;
  for (std::size_t i = 0; i < n; ++i)
    pool.push_back(th::sample("p" + std::to_string(i), {{"student", "q" + std::to_string(i)}}));
  return pool;
}

double has_z(const DialogueSample&, std::string_view text) {
  return text.find('z') != std::string_view::npos ? 1.0 : 0.0;
}

PPOConfig small_config() {
  PPOConfig c;
  c.n_steps = 64;
  c.batch_size = 16;
  c.learning_rate = 0.02;
  c.n_iters = 4;
  c.eval_every = 2;
  c.save_every = 2;
  c.eval_batch_size = 2;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("gae matches direct summation") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-2.0, 2.0), unit(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 32;
    std::vector<double> r(n), v(n);
    for (auto& x : r) x = u(rng);
    for (auto& x : v) x = u(rng);
    const double g = unit(rng), l = unit(rng), b = u(rng);
    const auto res = compute_gae(r, v, b, g, l);
    const auto oracle = direct_gae(r, v, b, g, l);
    for (std::size_t t = 0; t < n; ++t) {
      CHECK(std::abs(res.advantages[t] - oracle[t]) <= 1e-9);
      CHECK(std::abs(res.returns[t] - (oracle[t] + v[t])) <= 1e-9);
    }
  }
}

TEST_CASE("gae closed forms") {
  const std::vector<double> r = {1.0, -0.5, 2.0}, v = {0.3, 0.1, -0.2};
  const auto g0 = compute_gae(r, v, 5.0, 0.0, 0.95);
  for (std::size_t t = 0; t < 3; ++t) CHECK(g0.advantages[t] == r[t] - v[t]);
  const auto one = compute_gae(std::vector<double>{0.7}, std::vector<double>{0.2}, 1.5, 0.9, 0.5);
  CHECK(one.advantages[0] == 0.7 + 0.9 * 1.5 - 0.2);
  CHECK_THROWS_AS(compute_gae(r, std::vector<double>{1.0}, 0, 0.9, 0.9), TrainingError);
  CHECK_THROWS_AS(compute_gae(std::vector<double>{}, std::vector<double>{}, 0, 0.9, 0.9),
                  TrainingError);
  CHECK_THROWS_AS(compute_gae(std::vector<double>{NAN}, std::vector<double>{0}, 0, 0.9, 0.9),
                  TrainingError);
}

TEST_CASE("clip algebra") {
  const double l15 = std::log(1.5), l05 = std::log(0.5);
  auto s = clipped_surrogate(std::vector<double>{l15}, std::vector<double>{0.0},
                             std::vector<double>{1.0}, 0.2);
  CHECK(s.objective[0] == doctest::Approx(1.2).epsilon(1e-15));
  CHECK(s.clipped[0]);
  CHECK(s.dobjective_dlogp[0] == 0.0);
  s = clipped_surrogate(std::vector<double>{l05}, std::vector<double>{0.0},
                        std::vector<double>{-1.0}, 0.2);
  CHECK(s.objective[0] == doctest::Approx(-0.8).epsilon(1e-15));
  CHECK(s.clipped[0]);
  // Inside the trust region the gradient is rho * A.
  s = clipped_surrogate(std::vector<double>{std::log(1.1)}, std::vector<double>{0.0},
                        std::vector<double>{2.0}, 0.2);
  CHECK_FALSE(s.clipped[0]);
  CHECK(s.dobjective_dlogp[0] == doctest::Approx(2.2));
  // Pessimistic branch: rho above the range with negative advantage is not clipped.
  s = clipped_surrogate(std::vector<double>{l15}, std::vector<double>{0.0},
                        std::vector<double>{-1.0}, 0.2);
  CHECK_FALSE(s.clipped[0]);
  CHECK(s.objective[0] == doctest::Approx(-1.5));
  CHECK(clipped_policy_objective(std::vector<double>{l15, l05}, std::vector<double>{0.0, 0.0},
                                 std::vector<double>{1.0, -1.0}, 0.2, 0.01, 2.0) ==
        doctest::Approx(-(1.2 - 0.8) / 2 - 0.02));
}

TEST_CASE("policy loss gradient matches central differences") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n;
  for (int point = 0; point < 10; ++point) {
    TinyLMConfig lc;
    lc.max_positions = 6;
    lc.init_scale = 0.7;
    lc.seed = 100 + static_cast<std::uint64_t>(point);
    TinyCharLM lm(lc);
    std::vector<PolicyLossToken> tokens;
    std::vector<int> prefix = lm.encode("ab");
    std::vector<double> z(lm.vocab_size()), lp(lm.vocab_size());
    for (int t = 0; t < 6; ++t) {
      lm.logits(prefix, z);
      masked_log_softmax(z, t < 2 ? lm.eos_token() : -1, lp);
      const int a = 'a' + static_cast<int>(rng() % 4);
      tokens.push_back({prefix, a, lp[static_cast<std::size_t>(a)] + 0.3 * n(rng), n(rng), t < 2});
      prefix.push_back(a);
    }
    auto params = lm.policy_parameters();
    std::vector<double> grad(params.size(), 0.0);
    policy_minibatch_loss(lm, tokens, 0.2, 0.01, grad);
    std::vector<std::size_t> coords;
    for (std::size_t i = 0; i < grad.size(); ++i)
      if (grad[i] != 0.0 && rng() % 40 == 0) coords.push_back(i);
    for (int k = 0; k < 10; ++k) coords.push_back(rng() % grad.size());
    long double num = 0, den = 0;
    const double h = 1e-6;
    for (auto i : coords) {
      const double keep = params[i];
      params[i] = keep + h;
      const double up = policy_minibatch_loss(lm, tokens, 0.2, 0.01, {});
      params[i] = keep - h;
      const double down = policy_minibatch_loss(lm, tokens, 0.2, 0.01, {});
      params[i] = keep;
      const double fd = (up - down) / (2 * h);
      num += (fd - grad[i]) * (fd - grad[i]);
      den += grad[i] * grad[i];
    }
    REQUIRE(den > 0);
    CHECK(std::sqrt(num / den) <= 1e-4);
  }
}

TEST_CASE("rollouts respect horizon, minimum length and reward shaping") {
  TinyCharLM lm;
  const auto ref = lm.clone_policy();
  auto cfg = small_config();
  cfg.n_steps = 100;
  cfg.max_episode_length = 15;
  cfg.min_length = 4;
  cfg.kl_coeff = 0.5;
  std::mt19937_64 rng(3);
  std::size_t calls = 0;
  RewardFn reward = [&](const DialogueSample& s, std::string_view text) {
    ++calls;
    return static_cast<double>(text.size()) + (s.id == "p0" ? 100.0 : 0.0);
  };
  const auto batch = collect_rollouts(lm, *ref, prompts(3), reward, cfg, rng);
  CHECK(batch.total_actions >= 100);
  CHECK(batch.total_actions - batch.trajectories.back().size() < 100);
  CHECK(calls == batch.trajectories.size());
  for (const auto& tr : batch.trajectories) {
    CHECK(tr.size() <= 15);
    CHECK(tr.size() >= 4);
    for (std::size_t t = 0; t < 4 && t < tr.size(); ++t) CHECK(tr.action_tokens[t] != lm.eos_token());
    if (tr.size() < 15) {
      CHECK(tr.ended_with_eos);
      CHECK(tr.action_tokens.back() == lm.eos_token());
    }
    CHECK(tr.terminal_reward == static_cast<double>(tr.decoded_text.size()) + (tr.sample_id == "p0" ? 100.0 : 0.0));
    for (std::size_t t = 0; t < tr.size(); ++t) {
      double expected = -0.5 * (tr.behavior_logprobs[t] - tr.reference_logprobs[t]);
      if (t + 1 == tr.size()) expected += tr.terminal_reward;
      CHECK(tr.shaped_rewards[t] == doctest::Approx(expected).epsilon(1e-12));
      CHECK(tr.reference_kl[t] == doctest::Approx(0.0).epsilon(1e-12));
    }
    const auto g = compute_gae(tr.shaped_rewards, tr.values, 0.0, cfg.gamma, cfg.gae_lambda);
    CHECK(g.advantages == tr.advantages);
  }
}

TEST_CASE("prompt truncation keeps the leading tokens") {
  TinyCharLM lm;
  const auto ref = lm.clone_policy();
  auto cfg = small_config();
  cfg.max_prompt_length = 5;
  cfg.n_steps = 1;
  std::mt19937_64 rng(1);
  const auto pool = prompts(1);
  const auto batch = collect_rollouts(lm, *ref, pool, has_z, cfg, rng);
  const auto full = lm.encode(default_prompt_format(pool[0]));
  REQUIRE(full.size() > 5);
  CHECK(batch.trajectories[0].prompt_tokens == std::vector<int>(full.begin(), full.begin() + 5));
  CHECK(default_prompt_format(pool[0]) == "[student] q0\n[teacher] ");
}

TEST_CASE("greedy rollouts are deterministic") {
  TinyLMConfig lc;
  lc.init_scale = 0.5;
  TinyCharLM lm(lc);
  const auto ref = lm.clone_policy();
  auto cfg = small_config();
  cfg.do_sample = false;
  cfg.n_steps = 30;
  std::mt19937_64 a(1), b(1);
  const auto ba = collect_rollouts(lm, *ref, prompts(1), has_z, cfg, a);
  const auto bb = collect_rollouts(lm, *ref, prompts(1), has_z, cfg, b);
  CHECK(ba.trajectories[0].action_tokens == bb.trajectories[0].action_tokens);
}

TEST_CASE("zero advantages leave the policy unchanged") {
  TinyCharLM lm;
  const auto ref = lm.clone_policy();
  auto cfg = small_config();
  cfg.ent_coef = 0.0;
  cfg.normalize_advantages = false;
  std::mt19937_64 rng(2);
  auto batch = collect_rollouts(lm, *ref, prompts(2), has_z, cfg, rng);
  for (auto& tr : batch.trajectories) std::fill(tr.advantages.begin(), tr.advantages.end(), 0.0);
  const std::vector<double> before(lm.policy_parameters().begin(), lm.policy_parameters().end());
  PPOOptimizers opt{AdamW(cfg.adamw), AdamW(cfg.adamw)};
  const auto stats = ppo_update(batch.trajectories, lm, opt, cfg, rng);
  CHECK(stats.minibatches_applied > 0);
  CHECK(std::equal(before.begin(), before.end(), lm.policy_parameters().begin()));
}

TEST_CASE("update statistics") {
  TinyCharLM lm;
  const auto ref = lm.clone_policy();
  auto cfg = small_config();
  cfg.batch_size = 1000;
  cfg.value_update_epochs = 6;
  std::mt19937_64 rng(4);
  RewardFn vowels = [](const DialogueSample&, std::string_view text) {
    return static_cast<double>(std::count_if(text.begin(), text.end(), [](char c) {
      return std::string_view("aeiou").find(c) != std::string_view::npos;
    }));
  };
  const auto batch = collect_rollouts(lm, *ref, prompts(3), vowels, cfg, rng);
  PPOOptimizers opt{AdamW(cfg.adamw), AdamW(cfg.adamw)};
  const auto stats = ppo_update(batch.trajectories, lm, opt, cfg, rng);
  // One minibatch in one epoch: ratios are exactly 1 when it is evaluated.
  CHECK(stats.minibatches_applied == 1);
  CHECK(stats.clip_fraction == 0.0);
  CHECK(stats.approx_kl == doctest::Approx(0.0).epsilon(1e-12));
  REQUIRE(stats.value_loss_per_epoch.size() == 6);
  CHECK(stats.value_loss_per_epoch.back() < stats.value_loss_per_epoch.front());
  double mean_reward = 0;
  for (const auto& tr : batch.trajectories) mean_reward += tr.terminal_reward;
  CHECK(stats.mean_reward == doctest::Approx(mean_reward / batch.trajectories.size()));
  const auto j = stats.to_json();
  CHECK(j.contains("approx_kl"));
  CHECK(j.contains("clip_fraction"));
}

TEST_CASE("target kl stops the update early") {
  TinyCharLM lm;
  const auto ref = lm.clone_policy();
  auto cfg = small_config();
  cfg.n_steps = 200;
  cfg.batch_size = 8;
  cfg.n_epochs = 4;
  cfg.learning_rate = 0.5;
  cfg.target_kl = 1e-6;
  std::mt19937_64 rng(6);
  const auto batch = collect_rollouts(lm, *ref, prompts(3), has_z, cfg, rng);
  PPOOptimizers opt{AdamW(cfg.adamw), AdamW(cfg.adamw)};
  const auto stats = ppo_update(batch.trajectories, lm, opt, cfg, rng);
  CHECK(stats.early_stopped);
  CHECK(stats.minibatches_applied < 4 * ((batch.total_actions + 7) / 8));
}

TEST_CASE("non-finite gradients restore the entry parameters") {
  TinyCharLM lm;
  const auto ref = lm.clone_policy();
  auto cfg = small_config();
  std::mt19937_64 rng(8);
  auto batch = collect_rollouts(lm, *ref, prompts(2), has_z, cfg, rng);
  batch.trajectories[0].advantages[0] = NAN;
  const std::vector<double> before(lm.policy_parameters().begin(), lm.policy_parameters().end());
  PPOOptimizers opt{AdamW(cfg.adamw), AdamW(cfg.adamw)};
  const auto stats = ppo_update(batch.trajectories, lm, opt, cfg, rng);
  CHECK(stats.aborted);
  CHECK(std::equal(before.begin(), before.end(), lm.policy_parameters().begin()));
}

TEST_CASE("evaluation and checkpoint cadence") {
  TinyCharLM lm;
  auto cfg = small_config();
  cfg.n_steps = 20;
  cfg.n_iters = 40;
  cfg.eval_every = 20;
  cfg.save_every = 10;
  cfg.eval_num_beams = 2;
  cfg.eval_min_length = 2;
  cfg.eval_max_new_tokens = 4;
  th::TempDir dir("rl");
  RLRunOptions opt;
  opt.run_dir = dir.str("run");
  std::size_t callbacks = 0;
  opt.on_iteration = [&](std::size_t, const UpdateStats&) { ++callbacks; };
  const auto run = train_rl(lm, prompts(2), has_z, cfg, opt);
  CHECK(callbacks == 40);
  CHECK(run.iterations.size() == 40);
  REQUIRE(run.evaluations.size() == 2);
  CHECK(run.evaluations[0].iteration == 20);
  CHECK(run.evaluations[1].iteration == 40);
  CHECK(run.checkpoints.size() == 4);
  CHECK(std::filesystem::exists(dir.path / "run/checkpoint-iter-40/manifest.json"));
  CHECK(th::read_file(dir.str("run/eval.csv")).starts_with("iteration,mean_reward\n"));
}

TEST_CASE("seeded runs are identical") {
  auto cfg = small_config();
  TinyCharLM a, b;
  const auto ra = train_rl(a, prompts(3), has_z, cfg);
  const auto rb = train_rl(b, prompts(3), has_z, cfg);
  REQUIRE(ra.iterations.size() == rb.iterations.size());
  for (std::size_t i = 0; i < ra.iterations.size(); ++i)
    CHECK(ra.iterations[i].to_json() == rb.iterations[i].to_json());
  CHECK(std::equal(a.policy_parameters().begin(), a.policy_parameters().end(),
                   b.policy_parameters().begin()));
}

TEST_CASE("config validation") {
  PPOConfig c;
  CHECK_NOTHROW(c.validate());
  c.clip_range = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.gamma = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.prompt_truncation_side = "middle";
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
