#include "sombrl/errors.hpp"
#include "sombrl/runner.hpp"
#include "synthetic_env.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

using namespace sombrl;
using sombrl::testing::SyntheticEnv;
using sombrl::testing::SyntheticSpec;

namespace {

RunConfig lean_config(const SyntheticEnv& env, Regime regime, int episodes) {
  RunConfig rc;
  rc.regime = regime;
  rc.episodes = episodes;
  rc.model = env.matching_model();
  rc.planner.icem.population = 30;
  rc.planner.icem.elites = 5;
  rc.planner.icem.iterations = 2;
  rc.planner.icem.horizon = 8;
  rc.lambda.value = 1.0;
  rc.seed = 11;
  return rc;
}

long double oracle_horizon(int n, long double gamma) {
  const long double r = -std::log(static_cast<long double>(n)) / std::log(gamma);
  return std::max<long double>(1.0L, std::ceil(r - 1e-12L));
}

}  // namespace

TEST_SUITE("runner") {

TEST_CASE("one short episode yields exactly its transitions") {
  SyntheticSpec spec;
  spec.horizon = 5;
  const SyntheticEnv env(spec);
  const ExperimentLog log = run_experiment(env, lean_config(env, Regime::Episodic, 1));
  REQUIRE(log.episodes.size() == 1);
  CHECK(log.episodes[0].length == 5);
  CHECK(log.episodes[0].model_points == 5);
  CHECK(log.model_updates == 1);
  CHECK(log.resets == 1);
  CHECK_FALSE(log.failed);
}

TEST_CASE("runs are deterministic given the seed") {
  const SyntheticEnv env(SyntheticSpec{});
  const RunConfig rc = lean_config(env, Regime::Episodic, 3);
  const ExperimentLog a = run_experiment(env, rc);
  const ExperimentLog b = run_experiment(env, rc);
  REQUIRE(a.episodes.size() == b.episodes.size());
  for (std::size_t i = 0; i < a.episodes.size(); ++i) {
    CHECK(a.episodes[i].episode_return == b.episodes[i].episode_return);
    CHECK(a.episodes[i].info_gain == b.episodes[i].info_gain);
  }
  RunConfig other = rc;
  other.seed = 12;
  CHECK(run_experiment(env, other).episodes[1].episode_return != a.episodes[1].episode_return);
}

TEST_CASE("information gain is nondecreasing across episodes") {
  const SyntheticEnv env(SyntheticSpec{});
  const ExperimentLog log = run_experiment(env, lean_config(env, Regime::Episodic, 4));
  for (std::size_t i = 1; i < log.episodes.size(); ++i) {
    CHECK(log.episodes[i].info_gain >= log.episodes[i - 1].info_gain);
  }
}

TEST_CASE("horizon schedule examples") {
  CHECK(horizon_schedule(1, 0.5) == 1);
  CHECK(horizon_schedule(1, 0.999) == 1);
  CHECK(horizon_schedule(10, 0.9) == 22);
  CHECK(horizon_schedule(10, 0.99) == 230);
  CHECK_THROWS_AS(horizon_schedule(0, 0.9), InputError);
  CHECK_THROWS_AS(horizon_schedule(3, 1.0), InputError);
}

TEST_CASE("horizon schedule matches an extended-precision evaluation and is monotone") {
  for (double gamma : {0.5, 0.9, 0.95, 0.99}) {
    int prev = 0;
    for (int n = 1; n <= 300; ++n) {
      const int t = horizon_schedule(n, gamma);
      CHECK(t == static_cast<int>(oracle_horizon(n, gamma)));
      CHECK(t >= prev);
      prev = t;
    }
  }
}

TEST_CASE("discounted episodes follow the horizon schedule") {
  const SyntheticEnv env(SyntheticSpec{});
  RunConfig rc = lean_config(env, Regime::Discounted, 8);
  rc.gamma = 0.7;
  const ExperimentLog log = run_experiment(env, rc);
  REQUIRE(log.episodes.size() == 8);
  long total = 0, expected = 0;
  for (int n = 0; n < 8; ++n) {
    CHECK(log.episodes[static_cast<std::size_t>(n)].length == horizon_schedule(n + 1, 0.7));
    total += log.episodes[static_cast<std::size_t>(n)].length;
    expected += static_cast<long>(std::max(1.0, std::ceil(-std::log(n + 1.0) / std::log(0.7))));
  }
  CHECK(total == expected);
  CHECK(log.episodes.back().model_points == total);
}

TEST_CASE("discount truncation point") {
  CHECK(discount_truncation(0.9, 1.0) == 88);
  CHECK(std::pow(0.9, 88) < 1e-4);
  CHECK(std::pow(0.9, 87) >= 1e-4);
  CHECK(discount_truncation(0.5, 2.0) == 15);
}

TEST_CASE("update trigger examples") {
  const double noise = 0.04;
  CHECK(update_trigger({Eigen::VectorXd::Constant(1, 3.0 * noise)}, noise, std::log(2.0)));
  CHECK_FALSE(update_trigger({Eigen::VectorXd::Zero(1)}, noise, std::log(2.0)));

  // Each step carries exactly half a bit: sqrt(2) - 1 = exp(log 2 / 2) - 1.
  const Eigen::VectorXd half = Eigen::VectorXd::Constant(1, std::expm1(0.5 * std::log(2.0)) * noise);
  std::vector<Eigen::VectorXd> acc{half};
  CHECK_FALSE(update_trigger(acc, noise, std::log(2.0)));
  acc.push_back(half);
  const double two = information_sum(acc, noise);
  CHECK(two == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(update_trigger(acc, noise, std::log(2.0)) == (two > std::log(2.0)));
  acc.push_back(half);
  CHECK(update_trigger(acc, noise, std::log(2.0)));

  CHECK(update_trigger({Eigen::VectorXd::Zero(1)}, noise, std::log(2.0), 500, 500));
  CHECK_FALSE(update_trigger({Eigen::VectorXd::Zero(1)}, noise, std::log(2.0), 499, 500));
  CHECK_FALSE(update_trigger({Eigen::VectorXd::Constant(1, 1e6)}, noise,
                             std::numeric_limits<double>::infinity(), 10000, 500));
}

TEST_CASE("nonepisodic run never resets and triggers exactly on the bit threshold") {
  SyntheticSpec spec;
  spec.horizon = 40;
  const SyntheticEnv env(spec);
  RunConfig rc = lean_config(env, Regime::Nonepisodic, 5);

  Eigen::VectorXd last;
  long continuity_breaks = 0;
  RunHooks hooks;
  hooks.on_step = [&](const Transition& t) {
    if (last.size() > 0 && t.state != last) ++continuity_breaks;
    last = t.next_state;
  };
  const ExperimentLog log = run_experiment(env, rc, &hooks);
  CHECK(log.resets == 1);
  CHECK(continuity_breaks == 0);
  REQUIRE(log.steps.size() == 200);
  CHECK(log.episodes.size() == 5);

  // Recompute the accumulated sum with a scalar loop and compare each decision.
  const double noise = rc.model.noise_std * rc.model.noise_std;
  double acc = 0.0;
  int since = 0;
  int events = 0;
  for (const StepRecord& s : log.steps) {
    if (s.update_index == 0) continue;  // random warm-up stretch
    for (Eigen::Index j = 0; j < s.variance.size(); ++j) acc += std::log(1.0 + s.variance(j) / noise);
    ++since;
    const bool expected = acc > std::log(2.0) || since >= rc.hard_cap;
    CHECK(s.trigger == expected);
    CHECK(s.info_sum == doctest::Approx(acc).epsilon(1e-12));
    if (s.trigger) {
      ++events;
      acc = 0.0;
      since = 0;
    }
  }
  CHECK(events + 1 == log.model_updates);
  CHECK(static_cast<int>(log.trigger_steps.size()) == log.model_updates);
}

TEST_CASE("property: trigger gaps lengthen as the model converges") {
  // Spearman correlation between gap index and gap length, median over seeds.
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0.0, equal = 0.0;
      for (double w : v) {
        less += w < v[i];
        equal += w == v[i];
      }
      r[i] = less + 0.5 * (equal + 1.0);
    }
    return r;
  };
  std::vector<double> rho;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SyntheticSpec spec;
    spec.horizon = 100;
    spec.function_seed = seed;
    const SyntheticEnv env(spec);
    RunConfig rc = lean_config(env, Regime::Nonepisodic, 6);
    rc.seed = seed;
    const ExperimentLog log = run_experiment(env, rc);
    std::vector<double> gaps, index;
    for (std::size_t i = 1; i < log.trigger_steps.size(); ++i) {
      gaps.push_back(static_cast<double>(log.trigger_steps[i] - log.trigger_steps[i - 1]));
      index.push_back(static_cast<double>(i));
    }
    REQUIRE(gaps.size() >= 3);
    const std::vector<double> rg = ranks(gaps), ri = ranks(index);
    const double mg = std::accumulate(rg.begin(), rg.end(), 0.0) / rg.size();
    const double mi = std::accumulate(ri.begin(), ri.end(), 0.0) / ri.size();
    double cov = 0.0, vg = 0.0, vi = 0.0;
    for (std::size_t i = 0; i < rg.size(); ++i) {
      cov += (rg[i] - mg) * (ri[i] - mi);
      vg += (rg[i] - mg) * (rg[i] - mg);
      vi += (ri[i] - mi) * (ri[i] - mi);
    }
    rho.push_back(vg > 0.0 ? cov / std::sqrt(vg * vi) : 0.0);
  }
  std::sort(rho.begin(), rho.end());
  CHECK(rho[1] >= 0.0);
}

TEST_CASE("infinite threshold leaves a single model update") {
  SyntheticSpec spec;
  spec.horizon = 30;
  const SyntheticEnv env(spec);
  RunConfig rc = lean_config(env, Regime::Nonepisodic, 3);
  rc.trigger_threshold = std::numeric_limits<double>::infinity();
  const ExperimentLog log = run_experiment(env, rc);
  CHECK(log.model_updates == 1);
  CHECK(log.trigger_steps.size() == 1);
  CHECK(log.resets == 1);
}

TEST_CASE("minimum horizon delays triggers") {
  SyntheticSpec spec;
  spec.horizon = 30;
  const SyntheticEnv env(spec);
  RunConfig rc = lean_config(env, Regime::Nonepisodic, 3);
  rc.min_horizon = 7;
  const ExperimentLog log = run_experiment(env, rc);
  for (std::size_t i = 1; i < log.trigger_steps.size(); ++i) {
    CHECK(log.trigger_steps[i] - log.trigger_steps[i - 1] >= 7);
  }
}

TEST_CASE("pure exploration plans with lambda one") {
  const SyntheticEnv env(SyntheticSpec{});
  RunConfig rc = lean_config(env, Regime::PureExploration, 3);
  rc.lambda.value = 50.0;
  const ExperimentLog log = run_experiment(env, rc);
  CHECK(log.episodes[0].lambda == 0.0);
  CHECK(log.episodes[1].lambda == 1.0);
  CHECK(log.episodes[2].lambda == 1.0);
}

TEST_CASE("autotune keeps lambda inside its bounds") {
  const SyntheticEnv env(SyntheticSpec{});
  RunConfig rc = lean_config(env, Regime::Episodic, 6);
  rc.lambda.mode = LambdaSchedule::Mode::AutoTune;
  rc.lambda.lambda_init = 2.0;
  rc.lambda.step_size = 5.0;
  rc.lambda.lambda_min = 0.5;
  rc.lambda.lambda_max = 3.0;
  rc.autotune_states = 3;
  const ExperimentLog log = run_experiment(env, rc);
  CHECK(log.episodes[1].lambda == 2.0);
  for (const auto& e : log.episodes) {
    if (e.episode == 0) continue;
    CHECK(e.lambda >= 0.5);
    CHECK(e.lambda <= 3.0);
  }
}

TEST_CASE("oracle is reproducible and beats random actions") {
  EnvSpec s;
  s.horizon = 60;
  const auto env = make_env(s);
  ICemConfig ic;
  ic.population = 60;
  ic.elites = 6;
  ic.iterations = 3;
  ic.horizon = 15;
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const double a = estimate_oracle(*env, ic, seeds);
  CHECK(a == estimate_oracle(*env, ic, seeds));
  CHECK(a > random_policy_return(*env, seeds));
}

TEST_CASE("invalid run settings are rejected") {
  const SyntheticEnv env(SyntheticSpec{});
  RunConfig rc = lean_config(env, Regime::Discounted, 2);
  rc.gamma = 1.5;
  CHECK_THROWS_AS(run_experiment(env, rc), InputError);
  rc.gamma = 0.9;
  rc.episodes = 0;
  CHECK_THROWS_AS(run_experiment(env, rc), InputError);
  CHECK_THROWS_AS(regime_from_string("forever"), InputError);
  CHECK(regime_from_string("nonepisodic") == Regime::Nonepisodic);
}

TEST_CASE("seed mixing separates substreams") {
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
  CHECK(mix_seed(0, 0) != mix_seed(0, 1));
  CHECK(mix_seed(7, 3) == mix_seed(7, 3));
  CHECK(hash_string("pendulum") != hash_string("mountaincar"));
}

}  // TEST_SUITE
