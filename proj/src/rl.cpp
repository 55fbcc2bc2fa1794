#include "pivotkit/rl.hpp"

#include <algorithm>
#include <cmath>

#include "pivotkit/errors.hpp"
#include "pivotkit/io.hpp"

namespace pk::rl {

using nn::Mlp;
using nn::MlpSpec;

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(long capacity, int obs_dim, int act_dim)
    : capacity_(capacity), obs_dim_(obs_dim), act_dim_(act_dim) {
  obs_.resize(obs_dim, capacity);
  act_.resize(act_dim, capacity);
  next_obs_.resize(obs_dim, capacity);
  rew_.resize(capacity);
  done_.resize(capacity);
}

void ReplayBuffer::push(const Eigen::VectorXf& obs, const Eigen::VectorXf& act, float reward,
                        const Eigen::VectorXf& next_obs, bool done) {
  obs_.col(head_) = obs;
  act_.col(head_) = act;
  next_obs_.col(head_) = next_obs;
  rew_(head_) = reward;
  done_(head_) = done ? 1.0f : 0.0f;
  head_ = (head_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

void ReplayBuffer::sample(int n, Rng& rng, Eigen::MatrixXf& obs, Eigen::MatrixXf& act,
                          Eigen::VectorXf& rew, Eigen::MatrixXf& next_obs,
                          Eigen::VectorXf& done) const {
  obs.resize(obs_dim_, n);
  act.resize(act_dim_, n);
  next_obs.resize(obs_dim_, n);
  rew.resize(n);
  done.resize(n);
  for (int i = 0; i < n; ++i) {
    const long j = static_cast<long>(rng.uniform_index(static_cast<std::uint64_t>(size_)));
    obs.col(i) = obs_.col(j);
    act.col(i) = act_.col(j);
    next_obs.col(i) = next_obs_.col(j);
    rew(i) = rew_(j);
    done(i) = done_(j);
  }
}

// ---------------------------------------------------------------------------
// Policy artifact + action sampling
// ---------------------------------------------------------------------------

void PolicyArtifact::save(const std::string& path) const {
  io::json h;
  h["kind"] = "policy";
  h["actor_spec"] = {{"input", actor.spec().input},
                     {"hidden", actor.spec().hidden},
                     {"output", actor.spec().output}};
  h["action_scale"] = action_scale;
  h["obs_dim"] = obs_dim;
  h["act_dim"] = act_dim;
  h["mode"] = static_cast<int>(mode);
  h["task"] = task_name;
  h["seed"] = seed;
  h["norm"] = {{"pos_y_offset", norm.pos_y_offset}, {"pos_y_scale", norm.pos_y_scale},
               {"pos_z_offset", norm.pos_z_offset}, {"pos_z_scale", norm.pos_z_scale},
               {"theta_scale", norm.theta_scale},   {"mass_offset", norm.mass_offset},
               {"mass_scale", norm.mass_scale},     {"half_len_offset", norm.half_len_offset},
               {"half_len_scale", norm.half_len_scale},
               {"half_wid_offset", norm.half_wid_offset},
               {"half_wid_scale", norm.half_wid_scale},
               {"mu_env_offset", norm.mu_env_offset},
               {"mu_env_scale", norm.mu_env_scale},
               {"mu_obj_offset", norm.mu_obj_offset},
               {"mu_obj_scale", norm.mu_obj_scale},
               {"mu_robot_offset", norm.mu_robot_offset},
               {"mu_robot_scale", norm.mu_robot_scale},
               {"force_scale", norm.force_scale}};
  io::save_model(path, h, {{"actor", &actor.params()}});
}

PolicyArtifact PolicyArtifact::load(const std::string& path) {
  const auto mf = io::load_model(path);
  if (mf.header.value("kind", "") != "policy")
    throw DependencyError(path + ": not a policy artifact");
  PolicyArtifact a;
  MlpSpec spec;
  spec.input = mf.header.at("actor_spec").at("input");
  spec.hidden = mf.header.at("actor_spec").at("hidden").get<std::vector<int>>();
  spec.output = mf.header.at("actor_spec").at("output");
  a.actor = Mlp(spec, 0);
  a.actor.params() = mf.blobs.at("actor");
  a.action_scale = mf.header.at("action_scale");
  a.obs_dim = mf.header.at("obs_dim");
  a.act_dim = mf.header.at("act_dim");
  a.mode = static_cast<RewardMode>(mf.header.at("mode").get<int>());
  a.task_name = mf.header.at("task");
  a.seed = mf.header.at("seed");
  const auto& n = mf.header.at("norm");
  a.norm.pos_y_offset = n.at("pos_y_offset");
  a.norm.pos_y_scale = n.at("pos_y_scale");
  a.norm.pos_z_offset = n.at("pos_z_offset");
  a.norm.pos_z_scale = n.at("pos_z_scale");
  a.norm.theta_scale = n.at("theta_scale");
  a.norm.mass_offset = n.at("mass_offset");
  a.norm.mass_scale = n.at("mass_scale");
  a.norm.half_len_offset = n.at("half_len_offset");
  a.norm.half_len_scale = n.at("half_len_scale");
  a.norm.half_wid_offset = n.at("half_wid_offset");
  a.norm.half_wid_scale = n.at("half_wid_scale");
  a.norm.mu_env_offset = n.at("mu_env_offset");
  a.norm.mu_env_scale = n.at("mu_env_scale");
  a.norm.mu_obj_offset = n.at("mu_obj_offset");
  a.norm.mu_obj_scale = n.at("mu_obj_scale");
  a.norm.mu_robot_offset = n.at("mu_robot_offset");
  a.norm.mu_robot_scale = n.at("mu_robot_scale");
  a.norm.force_scale = n.at("force_scale");
  return a;
}

Action sample_action(const Mlp& actor, const Observation& obs, double action_scale,
                     bool stochastic, Rng& rng, double* log_prob) {
  const Eigen::VectorXf x = obs.concat().cast<float>();
  const Eigen::MatrixXf out = actor.forward(x);
  const int ad = static_cast<int>(out.rows()) / 2;
  const Eigen::VectorXf mean = out.topRows(ad).col(0);
  Eigen::VectorXf a;
  if (stochastic) {
    const Eigen::VectorXf log_std = out.bottomRows(ad).col(0);
    double lp;
    nn::SquashedGaussian::sample(mean, log_std, action_scale, rng, a, lp);
    if (log_prob) *log_prob = lp;
  } else {
    a = nn::SquashedGaussian::mean_action(mean, action_scale);
    if (log_prob) *log_prob = 0.0;
  }
  return Action::from_flat(a.cast<double>());
}

// ---------------------------------------------------------------------------
// SAC training
// ---------------------------------------------------------------------------

namespace {

constexpr float kLogStdMin = nn::SquashedGaussian::kLogStdMin;
constexpr float kLogStdMax = nn::SquashedGaussian::kLogStdMax;

// Batched squashed-Gaussian sample with everything needed for gradients.
struct BatchSample {
  Eigen::MatrixXf xi;        // standard normal draws (act x B)
  Eigen::MatrixXf tanh_u;    // tanh(mean + std xi)
  Eigen::MatrixXf std;       // exp(clamped log_std)
  Eigen::MatrixXf actions;   // scale * tanh_u
  Eigen::VectorXf log_prob;  // per sample
  Eigen::MatrixXf clamp_mask;  // 1 where log_std inside the clamp range
};

void sample_batch(const Eigen::MatrixXf& actor_out, double scale, Rng& rng, BatchSample& s) {
  const int ad = static_cast<int>(actor_out.rows()) / 2;
  const int B = static_cast<int>(actor_out.cols());
  s.xi.resize(ad, B);
  s.tanh_u.resize(ad, B);
  s.std.resize(ad, B);
  s.actions.resize(ad, B);
  s.log_prob = Eigen::VectorXf::Zero(B);
  s.clamp_mask.resize(ad, B);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < ad; ++i) {
      const float ls_raw = actor_out(ad + i, b);
      const float ls = std::clamp(ls_raw, kLogStdMin, kLogStdMax);
      s.clamp_mask(i, b) = (ls_raw > kLogStdMin && ls_raw < kLogStdMax) ? 1.0f : 0.0f;
      const float sd = std::exp(ls);
      const float xi = static_cast<float>(rng.normal01());
      const float u = actor_out(i, b) + sd * xi;
      const float t = std::tanh(u);
      s.xi(i, b) = xi;
      s.std(i, b) = sd;
      s.tanh_u(i, b) = t;
      s.actions(i, b) = static_cast<float>(scale) * t;
      s.log_prob(b) += -0.5f * xi * xi - 0.5f * static_cast<float>(std::log(2.0 * M_PI)) - ls -
                       std::log(static_cast<float>(scale) * (1.0f - t * t) + 1e-9f);
    }
  }
}

struct Critic {
  Mlp net;
  Mlp target;
  nn::AdamState adam;
  Eigen::VectorXf grads;

  Critic(const MlpSpec& spec, std::uint64_t seed, double lr)
      : net(spec, seed), target(net), adam(net.param_count(), lr),
        grads(Eigen::VectorXf::Zero(net.param_count())) {}
};

Eigen::VectorXf obs_flat(const Observation& o) { return o.concat().cast<float>(); }

}  // namespace

TrainResult train_teacher(const TaskSpec& task, RewardMode mode, const DemoDataset* demos,
                          const DomainRandomizationConfig& dr, const SacConfig& config,
                          std::uint64_t seed, const RewardCoefficients& coeffs,
                          const SimConfig& sc, const TrainCallbacks& callbacks) {
  if (mode != RewardMode::vanilla) {
    if (!demos || demos->records.empty())
      throw ConfigError("train_teacher: demo-conditioned mode without demonstrations");
    if (mode == RewardMode::dyn && demos->mode != cito::FeasibilityLevel::dynamic)
      throw ConfigError("train_teacher: dyn reward requires a dynamic demo dataset");
  }
  if (!coeffs.valid()) throw ConfigError("train_teacher: invalid reward coefficients");

  sim::NormalizationConfig norm;
  Env env(task, sc, dr, norm);
  Env eval_env(task, sc, dr, norm);
  if (mode != RewardMode::vanilla) {
    env.bind_demos(demos);
    eval_env.bind_demos(demos);
  }

  const int ne = env.n_extrinsic();
  const int obs_dim = Observation::privileged_dim(ne) + Observation::sensor_dim(task.n_robots);
  const int act_dim = 2 * task.n_robots;

  MlpSpec actor_spec;
  actor_spec.input = obs_dim;
  actor_spec.hidden = config.hidden;
  actor_spec.output = 2 * act_dim;
  MlpSpec critic_spec;
  critic_spec.input = obs_dim + act_dim;
  critic_spec.hidden = config.hidden;
  critic_spec.output = 1;

  Rng root(seed);
  Mlp actor(actor_spec, root.child(1).next_u64());
  nn::AdamState actor_adam(actor.param_count(), config.actor_lr);
  Eigen::VectorXf actor_grads = Eigen::VectorXf::Zero(actor.param_count());
  Critic q1(critic_spec, root.child(2).next_u64(), config.critic_lr);
  Critic q2(critic_spec, root.child(3).next_u64(), config.critic_lr);

  float log_alpha = static_cast<float>(std::log(config.init_alpha));
  float alpha_m = 0.0f, alpha_v = 0.0f;
  long alpha_t = 0;
  const double target_entropy = -static_cast<double>(act_dim);

  ReplayBuffer buffer(config.replay_capacity, obs_dim, act_dim);
  Rng learner = root.child(4);

  TrainResult result;
  result.curve.seed = seed;

  auto make_policy = [&]() {
    PolicyArtifact p;
    p.actor = actor;
    p.norm = norm;
    p.action_scale = sc.a_max;
    p.obs_dim = obs_dim;
    p.act_dim = act_dim;
    p.mode = mode;
    p.task_name = task.kind == cito::TaskKind::with_wall ? "with_wall" : "without_wall";
    p.seed = seed;
    return p;
  };

  if (config.total_steps <= 0) {
    result.policy = make_policy();
    return result;
  }

  // Scratch for updates.
  Eigen::MatrixXf b_obs, b_act, b_next;
  Eigen::VectorXf b_rew, b_done;
  BatchSample next_sample, cur_sample;

  long episode = 0;
  auto rr = env.reset(root.child(0x10000 + episode).next_u64());
  rewards::DemoLookup lookup{rr.demo, 0.1};
  Eigen::VectorXf obs_now = obs_flat(rr.observation);
  Eigen::VectorXd a_prev = Eigen::VectorXd::Zero(act_dim);
  long ep_len = 0;

  for (long step = 1; step <= config.total_steps; ++step) {
    // --- act ---
    Action action;
    if (step <= config.warmstart_steps) {
      Eigen::VectorXd flat(act_dim);
      for (int i = 0; i < act_dim; ++i) flat(i) = learner.uniform(-sc.a_max, sc.a_max);
      action = Action::from_flat(flat);
    } else {
      Observation o;
      o.privileged = obs_now.head(Observation::privileged_dim(ne)).cast<double>();
      o.sensor = obs_now.tail(Observation::sensor_dim(task.n_robots)).cast<double>();
      action = sample_action(actor, o, sc.a_max, true, learner);
    }

    const auto outcome = env.step(action);
    ep_len++;

    rewards::StepRewardInputs rin;
    rin.pose = outcome.info.true_pose;
    rin.goal = env.task().goal_pose;  // goal for the episode's geometry
    rin.action_prev = a_prev;
    rin.action_curr = action.flat();
    rin.robot_pos = outcome.info.robot_actual;
    rin.robot_force_world = outcome.info.robot_force_world;
    rin.contacts = outcome.info.true_contacts;
    rin.out_of_plane = outcome.info.out_of_plane;
    rin.out_of_plane_penalty = sc.out_of_plane_penalty;
    const double reward =
        rewards::total_reward(mode, rin, env.state().scene, lookup, coeffs);
    if (!std::isfinite(reward)) throw NumericalError("train_teacher: non-finite reward");

    const Eigen::VectorXf obs_next = obs_flat(outcome.observation);
    const bool terminal = outcome.termination == sim::Termination::success ||
                          outcome.termination == sim::Termination::out_of_plane_fail;
    buffer.push(obs_now, action.flat().cast<float>(), static_cast<float>(reward), obs_next,
                terminal);

    a_prev = action.flat();
    obs_now = obs_next;

    if (outcome.termination != sim::Termination::running) {
      ++episode;
      rr = env.reset(root.child(0x10000 + episode).next_u64());
      lookup.demo = rr.demo;
      obs_now = obs_flat(rr.observation);
      a_prev.setZero();
      ep_len = 0;
    }

    // --- learn ---
    if (step > config.warmstart_steps && buffer.size() >= config.batch_size &&
        step % config.updates_every == 0) {
      buffer.sample(config.batch_size, learner, b_obs, b_act, b_rew, b_next, b_done);
      const int B = config.batch_size;
      const float alpha = std::exp(log_alpha);

      // Targets.
      const Eigen::MatrixXf next_out = actor.forward(b_next);
      sample_batch(next_out, sc.a_max, learner, next_sample);
      Eigen::MatrixXf qin_next(obs_dim + act_dim, B);
      qin_next.topRows(obs_dim) = b_next;
      qin_next.bottomRows(act_dim) = next_sample.actions;
      const Eigen::MatrixXf t1 = q1.target.forward(qin_next);
      const Eigen::MatrixXf t2 = q2.target.forward(qin_next);
      Eigen::VectorXf y(B);
      for (int b = 0; b < B; ++b) {
        const float qmin = std::min(t1(0, b), t2(0, b));
        y(b) = b_rew(b) + static_cast<float>(config.discount) * (1.0f - b_done(b)) *
                              (qmin - alpha * next_sample.log_prob(b));
      }

      // Critic updates.
      Eigen::MatrixXf qin(obs_dim + act_dim, B);
      qin.topRows(obs_dim) = b_obs;
      qin.bottomRows(act_dim) = b_act;
      for (Critic* c : {&q1, &q2}) {
        Mlp::Cache cache;
        const Eigen::MatrixXf pred = c->net.forward(qin, &cache);
        Eigen::MatrixXf gout = (pred.row(0).transpose() - y).transpose() / static_cast<float>(B);
        c->grads.setZero();
        c->net.backward(cache, gout, c->grads);
        c->adam.step(c->net.params(), c->grads);
      }

      // Actor update.
      Mlp::Cache actor_cache;
      const Eigen::MatrixXf cur_out = actor.forward(b_obs, &actor_cache);
      sample_batch(cur_out, sc.a_max, learner, cur_sample);
      Eigen::MatrixXf qin_new(obs_dim + act_dim, B);
      qin_new.topRows(obs_dim) = b_obs;
      qin_new.bottomRows(act_dim) = cur_sample.actions;
      Mlp::Cache c1_cache, c2_cache;
      const Eigen::MatrixXf q1v = q1.net.forward(qin_new, &c1_cache);
      const Eigen::MatrixXf q2v = q2.net.forward(qin_new, &c2_cache);
      // dQmin/da via masked backward passes through each critic.
      Eigen::MatrixXf mask1 = Eigen::MatrixXf::Zero(1, B);
      Eigen::MatrixXf mask2 = Eigen::MatrixXf::Zero(1, B);
      for (int b = 0; b < B; ++b)
        (q1v(0, b) <= q2v(0, b) ? mask1 : mask2)(0, b) = 1.0f / static_cast<float>(B);
      q1.grads.setZero();
      q2.grads.setZero();
      const Eigen::MatrixXf gin1 = q1.net.backward(c1_cache, mask1, q1.grads);
      const Eigen::MatrixXf gin2 = q2.net.backward(c2_cache, mask2, q2.grads);
      const Eigen::MatrixXf dq_da = gin1.bottomRows(act_dim) + gin2.bottomRows(act_dim);

      const int ad = act_dim;
      Eigen::MatrixXf gact(2 * ad, B);
      const float scale = static_cast<float>(sc.a_max);
      for (int b = 0; b < B; ++b) {
        for (int i = 0; i < ad; ++i) {
          const float t = cur_sample.tanh_u(i, b);
          const float one_m_t2 = 1.0f - t * t;
          const float denom = scale * one_m_t2 + 1e-9f;
          const float w = 2.0f * t * scale * one_m_t2 / denom;  // dlogpi/du
          const float da_du = scale * one_m_t2;
          const float sd = cur_sample.std(i, b);
          const float xi = cur_sample.xi(i, b);
          // Loss = mean(alpha logpi - Qmin); dq_da already holds d(mean Qmin)/da.
          const float dmean = alpha * w / static_cast<float>(B) - dq_da(i, b) * da_du;
          const float dls_core = alpha * (-1.0f + w * sd * xi) / static_cast<float>(B) -
                                 dq_da(i, b) * da_du * sd * xi;
          gact(i, b) = dmean;
          gact(ad + i, b) = dls_core * cur_sample.clamp_mask(i, b);
        }
      }
      actor_grads.setZero();
      actor.backward(actor_cache, gact, actor_grads);
      actor_adam.step(actor.params(), actor_grads);

      // Temperature update toward the target entropy.
      float dlog_alpha = 0.0f;
      for (int b = 0; b < B; ++b)
        dlog_alpha +=
            -(cur_sample.log_prob(b) + static_cast<float>(target_entropy)) * alpha;
      dlog_alpha /= static_cast<float>(B);
      ++alpha_t;
      alpha_m = 0.9f * alpha_m + 0.1f * dlog_alpha;
      alpha_v = 0.999f * alpha_v + 0.001f * dlog_alpha * dlog_alpha;
      const float mhat = alpha_m / (1.0f - std::pow(0.9f, static_cast<float>(alpha_t)));
      const float vhat = alpha_v / (1.0f - std::pow(0.999f, static_cast<float>(alpha_t)));
      log_alpha -= static_cast<float>(config.alpha_lr) * mhat / (std::sqrt(vhat) + 1e-8f);
      log_alpha = std::clamp(log_alpha, -10.0f, 2.0f);

      // Polyak averaging.
      const float tau = static_cast<float>(config.tau);
      q1.target.params() = (1.0f - tau) * q1.target.params() + tau * q1.net.params();
      q2.target.params() = (1.0f - tau) * q2.target.params() + tau * q2.net.params();
    }

    // --- evaluate ---
    if (step % config.eval_interval == 0 || step == config.total_steps) {
      PolicyArtifact snapshot = make_policy();
      const auto rep = evaluate(snapshot, task, dr, config.eval_episodes,
                                root.child(0x40000000ULL + static_cast<std::uint64_t>(step))
                                    .next_u64(),
                                sc, nullptr, mode != RewardMode::vanilla ? demos : nullptr);
      result.curve.points.emplace_back(step, rep.success_rate);
      if (callbacks.on_eval) callbacks.on_eval(step, rep.success_rate);
    }
  }

  result.policy = make_policy();
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalReport evaluate_policy(const PolicyFn& policy, const TaskSpec& task,
                           const DomainRandomizationConfig& dr, int episodes, std::uint64_t seed,
                           const SimConfig& sc, const DemoDataset* demos) {
  if (episodes < 1) throw ConfigError("evaluate: episodes must be >= 1");
  sim::NormalizationConfig norm;
  Env env(task, sc, dr, norm);
  if (demos) env.bind_demos(demos);
  Rng root(seed);

  EvalReport rep;
  rep.episodes = episodes;
  double sum_err = 0.0, sum_len = 0.0;
  int successes = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    auto rr = env.reset(root.child(static_cast<std::uint64_t>(ep)).next_u64());
    Observation obs = rr.observation;
    double final_err = M_PI;
    int len = 0;
    for (int t = 0; t < sc.max_episode_steps; ++t) {
      const Action a = policy(obs, env.state(), rr.demo, env);
      const auto out = env.step(a);
      obs = out.observation;
      final_err = out.info.orientation_error;
      len = t + 1;
      if (out.termination != sim::Termination::running) {
        if (out.termination == sim::Termination::success) ++successes;
        break;
      }
    }
    sum_err += final_err;
    sum_len += len;
  }
  rep.success_rate = static_cast<double>(successes) / episodes;
  rep.mean_theta_err = sum_err / episodes;
  rep.mean_episode_len = sum_len / episodes;
  return rep;
}

EvalReport evaluate(const PolicyArtifact& policy, const TaskSpec& task,
                    const DomainRandomizationConfig& dr, int episodes, std::uint64_t seed,
                    const SimConfig& sc, const EvalHooks* hooks, const DemoDataset* demos) {
  Rng dummy(0);
  PolicyFn fn = [&](const Observation& obs, const sim::EnvState& state, const Demonstration* demo,
                    Env& env) -> Action {
    (void)demo;
    Observation o = obs;
    if (hooks && hooks->transform_obs) hooks->transform_obs(o, state, env);
    return sample_action(policy.actor, o, policy.action_scale, false, dummy);
  };
  // on_reset hook is folded into transform_obs usage; a dedicated loop would
  // duplicate evaluate_policy for little gain.
  return evaluate_policy(fn, task, dr, episodes, seed, sc, demos);
}

// ---------------------------------------------------------------------------
// Replay expert
// ---------------------------------------------------------------------------

namespace {

struct DemoContactInfo {
  bool active = false;
  int face = 1;
  double s = 0.5;
  scene::ContactForce force;
};

DemoContactInfo demo_contact_at(const Demonstration& demo, int k, double robot_radius) {
  DemoContactInfo dc;
  const auto& pose = demo.object_traj[static_cast<std::size_t>(k)];
  const Eigen::Vector2d rp = demo.robot_traj[0][static_cast<std::size_t>(k)];
  double best = std::numeric_limits<double>::infinity();
  for (int f = 0; f < 4; ++f) {
    const auto [a, b] = cito::face_segment_world(pose, demo.params.geometry, f);
    const Eigen::Vector2d d = b - a;
    const double s = std::clamp(d.dot(rp - a) / d.squaredNorm(), 0.0, 1.0);
    const Eigen::Vector2d nu = cito::face_inward_normal_world(pose, f);
    const double err = (rp - (a + s * d - robot_radius * nu)).norm();
    if (err < best) {
      best = err;
      dc.face = f;
      dc.s = s;
    }
  }
  if (demo.has_forces()) dc.force = demo.robot_forces[0][static_cast<std::size_t>(k)];
  dc.active = dc.force.magnitude() > 1e-6;
  return dc;
}

}  // namespace

Action ReplayExpert::act(const Observation& obs, const sim::EnvState& state,
                         const Demonstration& demo, const SimConfig& sc) const {
  // Progress-matched demo index.
  int nearest = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (int t = 0; t <= demo.horizon(); ++t) {
    const auto& p = demo.object_traj[static_cast<std::size_t>(t)];
    const double d = std::hypot(state.object.y - p.y, state.object.z - p.z) +
                     0.1 * std::abs(scene::wrap_angle(state.object.theta - p.theta));
    if (d < bd) {
      bd = d;
      nearest = t;
    }
  }
  const int k = std::min(nearest + lookahead, demo.horizon());
  const auto dc = demo_contact_at(demo, k, sc.robot_radius);

  const auto [a, b] = cito::face_segment_world(state.object, state.params.geometry, dc.face);
  const Eigen::Vector2d nu = cito::face_inward_normal_world(state.object, dc.face);
  const Eigen::Vector2d tan(nu(1), -nu(0));
  const Eigen::Vector2d contact_pt = a + dc.s * (b - a);
  const Eigen::Vector2d hover = contact_pt - sc.robot_radius * nu;

  const Eigen::Vector2d d = b - a;
  const double s_now =
      std::clamp(d.dot(state.robot_actual[0] - a) / d.squaredNorm(), 0.0, 1.0);
  const double gap = (state.robot_actual[0] - (a + s_now * d)).dot(-nu) - sc.robot_radius;

  Eigen::Vector2d target;
  if (!dc.active || gap > 0.004 || (state.robot_actual[0] - hover).norm() > 0.03) {
    target = hover;  // approach the demo's contact point first
  } else {
    // Drive along the demonstrated force direction, with a tangential pull
    // toward the demo's contact point and a measured-force feedback that
    // aims slightly above the demo's magnitude (surplus makes the
    // quasistatic motion advance; the cap keeps lip contacts alive).
    const Eigen::Vector2d f_dir =
        (dc.force.normal_mag * nu + dc.force.tangential_mag * tan).normalized();
    const Eigen::Vector2d dir = f_dir;
    (void)obs;

    const double f_target = std::clamp(force_surplus * dc.force.magnitude(), 0.5, 6.0);
    // Proportional force control through the stiffness model: a command
    // offset of f/kp along the pressing axis produces force f.
    target = state.robot_actual[0] + dir * (f_target / state.kp);
  }
  Action act;
  act.delta = {(target - state.robot_command[0]).cwiseMax(-sc.a_max).cwiseMin(sc.a_max)};
  return act;
}

}  // namespace pk::rl
