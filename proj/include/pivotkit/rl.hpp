#pragma once

#include <functional>
#include <optional>

#include "pivotkit/nn.hpp"
#include "pivotkit/rewards.hpp"
#include "pivotkit/sim.hpp"

namespace pk::rl {

using cito::DemoDataset;
using cito::Demonstration;
using cito::TaskSpec;
using rewards::RewardCoefficients;
using rewards::RewardMode;
using sim::Action;
using sim::DomainRandomizationConfig;
using sim::Env;
using sim::Observation;
using sim::SimConfig;

/// Soft actor-critic hyperparameters. paper() preserves the published
/// profile; desk() is the scaled-down profile used by the experiments here.
struct SacConfig {
  long total_steps = 150000;
  int batch_size = 256;
  long replay_capacity = 200000;
  double discount = 0.9;
  double actor_lr = 1e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  long warmstart_steps = 2000;
  long eval_interval = 5000;
  int eval_episodes = 20;
  double tau = 0.005;
  int updates_every = 2;  // one gradient update per this many env steps
  std::vector<int> hidden = {64, 64};
  double init_alpha = 0.1;

  static SacConfig desk(bool with_wall = true) {
    SacConfig c;
    c.total_steps = with_wall ? 150000 : 400000;
    return c;
  }
  static SacConfig paper(bool with_wall = true) {
    SacConfig c;
    c.total_steps = with_wall ? 300000 : 1500000;
    c.batch_size = 4096;
    c.replay_capacity = 1000000;
    c.warmstart_steps = 50000;
    c.eval_interval = 10000;
    c.eval_episodes = 50;
    c.hidden = {128, 128};
    c.updates_every = 1;
    return c;
  }
};

/// Flat ring buffer, FIFO eviction.
class ReplayBuffer {
 public:
  ReplayBuffer(long capacity, int obs_dim, int act_dim);

  void push(const Eigen::VectorXf& obs, const Eigen::VectorXf& act, float reward,
            const Eigen::VectorXf& next_obs, bool done);
  void sample(int n, Rng& rng, Eigen::MatrixXf& obs, Eigen::MatrixXf& act, Eigen::VectorXf& rew,
              Eigen::MatrixXf& next_obs, Eigen::VectorXf& done) const;

  long size() const { return size_; }
  long capacity() const { return capacity_; }

 private:
  long capacity_;
  int obs_dim_, act_dim_;
  long size_ = 0, head_ = 0;
  Eigen::MatrixXf obs_, act_, next_obs_;
  Eigen::VectorXf rew_, done_;
};

/// Serialized teacher: the actor network plus everything needed to run it.
struct PolicyArtifact {
  nn::Mlp actor;  // outputs [mean; log_std]
  sim::NormalizationConfig norm;
  double action_scale = 0.01;
  int obs_dim = 0;
  int act_dim = 0;
  RewardMode mode = RewardMode::vanilla;
  std::string task_name;
  std::uint64_t seed = 0;

  void save(const std::string& path) const;
  static PolicyArtifact load(const std::string& path);
};

/// Squashed-Gaussian action from the actor. stochastic=false returns the
/// tanh-squashed mean. log_prob includes the squashing correction.
Action sample_action(const nn::Mlp& actor, const Observation& obs, double action_scale,
                     bool stochastic, Rng& rng, double* log_prob = nullptr);

struct LearningCurve {
  std::vector<std::pair<long, double>> points;  // (env steps, success rate)
  std::uint64_t seed = 0;
};

struct TrainResult {
  PolicyArtifact policy;
  LearningCurve curve;
};

struct TrainCallbacks {
  // Called after each evaluation point (env_steps, success_rate).
  std::function<void(long, double)> on_eval;
};

/// Episodic SAC training. mode kin/dyn binds the demo source to the env so
/// each episode's reward lookup matches its physical parameters. Fully
/// reproducible per seed (single-threaded learner + env).
TrainResult train_teacher(const TaskSpec& task, RewardMode mode, const DemoDataset* demos,
                          const DomainRandomizationConfig& dr, const SacConfig& config,
                          std::uint64_t seed, const RewardCoefficients& coeffs = {},
                          const SimConfig& sc = {}, const TrainCallbacks& callbacks = {});

struct EvalReport {
  double success_rate = 0.0;
  double mean_theta_err = 0.0;
  double mean_episode_len = 0.0;
  int episodes = 0;
};

/// Hooks for directed evaluations.
struct EvalHooks {
  /// Rewrites the observation the policy sees (privileged corruption,
  /// estimator-in-the-loop). Ground truth and termination are untouched.
  std::function<void(Observation&, const sim::EnvState&, Env&)> transform_obs;
  /// Called at episode start.
  std::function<void(Env&, const Demonstration*)> on_reset;
};

/// Deterministic evaluation of a trained policy (mean actions). Success is
/// the simulator's termination, never reward values.
EvalReport evaluate(const PolicyArtifact& policy, const TaskSpec& task,
                    const DomainRandomizationConfig& dr, int episodes, std::uint64_t seed,
                    const SimConfig& sc = {}, const EvalHooks* hooks = nullptr,
                    const DemoDataset* demos = nullptr);

/// Generic policy interface for scripted baselines.
using PolicyFn = std::function<Action(const Observation&, const sim::EnvState&,
                                      const Demonstration*, Env&)>;

EvalReport evaluate_policy(const PolicyFn& policy, const TaskSpec& task,
                           const DomainRandomizationConfig& dr, int episodes, std::uint64_t seed,
                           const SimConfig& sc = {}, const DemoDataset* demos = nullptr);

/// Demonstration-following expert: reads the contact schedule, force
/// direction and force scale from the episode's demo, approaches the demo's
/// contact point and drives the command along the demonstrated force
/// direction with a measured-force feedback that aims slightly above the
/// demo's magnitude. The scripted baseline for the playback experiments.
struct ReplayExpert {
  int lookahead = 3;
  double force_surplus = 3.0;  // target measured force / demo force

  Action act(const Observation& obs, const sim::EnvState& state, const Demonstration& demo,
             const SimConfig& sc) const;
};

}  // namespace pk::rl
