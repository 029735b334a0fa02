// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "deepbound/autodiff.hpp"
#include "deepbound/bounds.hpp"
#include "deepbound/error.hpp"
#include "deepbound/losses.hpp"
#include "deepbound/model.hpp"
#include "deepbound/planes.hpp"

namespace deepbound {

class CalibrationError : public Error {
 public:
  using Error::Error;
};

struct AttackConfig {
  Objective objective;
  BoundKind bound_kind = BoundKind::quantile;
  std::vector<double> epsilon;  // absolute, one per plane (a single value applies to all)
  LossWeights weights;
  BarrierKind barrier = BarrierKind::polynomial;
  std::size_t max_iterations = 1000;
  std::size_t patience = 50;
  double step = 0.0;  // 0 selects the step by binary search
  double step_lo = 0.0;
  double step_hi = 0.0625;
  std::size_t probes = 20;
  std::size_t probe_iterations = 25;
  std::size_t max_recoveries = 8;
  bool record_trace = true;

  double epsilon_for(std::size_t plane_index) const {
    if (epsilon.empty()) throw UsageError("attack needs an epsilon");
    return epsilon.size() == 1 ? epsilon.front() : epsilon.at(plane_index);
  }
};

struct TraceRow {
  std::size_t iteration = 0;
  double confidence = 0.0;
  double prediction_loss = 0.0;
  double barrier_loss = 0.0;
  double smoothing_loss = 0.0;
  double step = 0.0;
  bool feasible = true;
  bool success = false;  // of the iterate this row describes
};

struct AttackResult {
  Tensor x_adv;
  bool success = false;
  double confidence = 0.0;
  std::size_t iterations = 0;
  std::vector<TraceRow> trace;
  bool feasible = true;
  double occupancy = 0.0;         // worst plane
  std::vector<double> occupancies;  // per plane
  double step = 0.0;
  std::size_t recoveries = 0;
  bool aborted = false;
  bool consistent = true;  // false when the optimization ran on a modified dataflow
  bool step_warning = false;
};

/// One plane of the reference model with its profile and the bound resolved at x_nat.
struct BoundPlane {
  const PlaneProfile* profile = nullptr;
  BoundSpec bound;
};

/// Target model plus the reference model whose planes carry the bounds. They may be the same
/// object, in which case one forward pass serves both.
struct AttackModels {
  const Model& target;
  const Model& reference;

  bool shared() const noexcept { return &target == &reference; }
};

/// Resolves each profile's bound at the reference model's natural activations.
inline std::vector<BoundPlane> resolve_planes(const Model& reference, std::span<const PlaneProfile> profiles,
                                              const Tensor& x_nat, BoundKind kind,
                                              std::span<const double> eps) {
  if (profiles.empty()) throw UsageError("an attack needs at least one plane");
  const auto planes = enumerate_planes(reference.graph);
  const Tape tape = forward(reference.graph, reference.params, x_nat);
  std::vector<BoundPlane> out;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const PlaneProfile& p = profiles[i];
    if (p.plane.id >= planes.size() || !(planes[p.plane.id] == p.plane)) {
      throw UsageError("profile for plane " + p.plane.name + " does not match the reference model");
    }
    const double e = eps.size() == 1 ? eps.front() : eps[i];
    out.push_back({&p, resolve_bounds(p, gather_plane(tape, p.plane), kind, e)});
  }
  return out;
}

/// Largest step whose probe stays feasible, assuming feasibility is monotone in the step. If lo
/// itself is infeasible, returns lo with `warning` set.
inline double binary_search_step(const std::function<bool(double)>& feasible, double lo, double hi,
                                 std::size_t probes, bool* warning = nullptr) {
  if (warning) *warning = false;
  if (feasible(hi)) return hi;
  if (!feasible(lo)) {
    if (warning) *warning = true;
    return lo;
  }
  for (std::size_t i = 0; i < probes; ++i) {
    const double mid = 0.5 * (lo + hi);
    (feasible(mid) ? lo : hi) = mid;
  }
  return lo;
}

struct Measurement {
  Tensor logits;
  double confidence = 0.0;
  bool success = false;
  std::vector<std::vector<float>> activations;  // per plane, on the unmodified reference model
  std::vector<double> occupancies;
  double occupancy = 0.0;
  bool feasible = true;
};

/// Evaluates x on the unmodified models.
inline Measurement measure(const AttackModels& models, std::span<const BoundPlane> planes,
                           const Tensor& x, const Objective& obj) {
  Measurement m;
  Tape ref = forward(models.reference.graph, models.reference.params, x);
  m.logits = models.shared() ? ref.logits() : forward(models.target.graph, models.target.params, x).logits();
  m.confidence = attack_confidence(m.logits.values(), obj);
  m.success = attack_success(m.logits.values(), obj);
  for (const BoundPlane& bp : planes) {
    m.activations.push_back(gather_plane(ref, bp.profile->plane));
    m.occupancies.push_back(occupancy(bp.bound, m.activations.back()));
    m.occupancy = std::max(m.occupancy, m.occupancies.back());
  }
  m.feasible = m.occupancy <= 1.0;
  return m;
}

namespace detail {

inline void sign_step(Tensor& x, const Tensor& grad, double step) {
  const auto s = static_cast<float>(step);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float g = grad[i];
    const float d = g > 0.0f ? s : g < 0.0f ? -s : 0.0f;
    x[i] = std::clamp(x[i] - d, 0.0f, 1.0f);
  }
}

inline void check_gradient(const Tensor& g) {
  if (!g.all_finite()) throw NumericalError("non-finite input gradient");
}

inline void add_into(Tensor& acc, const Tensor& g) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

inline void finish(AttackResult& r, const AttackModels& models, std::span<const BoundPlane> planes,
                   const Objective& obj) {
  const Measurement m = measure(models, planes, r.x_adv, obj);
  r.success = m.success;
  r.confidence = m.confidence;
  r.occupancies = m.occupancies;
  r.occupancy = m.occupancy;
  r.feasible = m.feasible;
}

}  // namespace detail

/// Gradient of the combined loss (prediction on the target model, barrier and smoothing on the
/// reference planes) with respect to the input. Owns its tapes; one per attack.
class D2bObjective {
 public:
  D2bObjective(const AttackModels& models, std::span<const BoundPlane> planes, const AttackConfig& cfg)
      : models_(models), planes_(planes), cfg_(cfg) {}

  struct Value {
    double confidence = 0.0;
    double prediction = 0.0;
    double barrier = 0.0;
    double smoothing = 0.0;
    bool feasible = true;
    bool success = false;
  };

  /// Fills `grad` with d(total loss)/dx. Throws NumericalError on any exception signal.
  Value evaluate(const Tensor& x, Tensor& grad) {
    Value v;
    const Model& ref = models_.reference;
    forward(ref.graph, ref.params, x, ref_tape_);
    const Tape* target_tape = &ref_tape_;
    if (!models_.shared()) {
      forward(models_.target.graph, models_.target.params, x, target_tape_);
      target_tape = &target_tape_;
    }
    const auto logits = target_tape->logits().values();
    logit_grad_.assign(logits.size(), 0.0f);
    v.prediction = prediction_loss(logits, cfg_.objective, logit_grad_);
    v.confidence = attack_confidence(logits, cfg_.objective);
    v.success = attack_success(logits, cfg_.objective);

    plane_grads_.resize(planes_.size());
    seeds_.clear();
    for (std::size_t p = 0; p < planes_.size(); ++p) {
      const BoundPlane& bp = planes_[p];
      const Plane& plane = bp.profile->plane;
      act_.resize(plane.neuron_count);
      gather_plane(ref_tape_, plane, act_);
      if (occupancy(bp.bound, act_) > 1.0) v.feasible = false;
      auto& g = plane_grads_[p];
      g.assign(plane.neuron_count, 0.0f);
      v.barrier += barrier_loss(cfg_.barrier, bp.bound, act_, cfg_.weights, g);
      v.smoothing += smoothing_loss(*bp.profile, ref.graph, bp.bound, act_, cfg_.weights.alpha, g);
      for (float gi : g) {
        if (!std::isfinite(gi)) throw NumericalError("non-finite barrier gradient");
      }
      std::size_t offset = 0;
      for (NodeId n : plane.nodes) {
        const std::size_t len = element_count(ref.graph.node(n).shape);
        seeds_.push_back({n, std::span<const float>(g).subspan(offset, len)});
        offset += len;
      }
    }

    if (models_.shared()) {
      seeds_.push_back({ref.graph.logits(), logit_grad_});
      backward(ref_tape_, seeds_);
      grad = ref_tape_.input_gradient();
    } else {
      backward(ref_tape_, seeds_);
      grad = ref_tape_.input_gradient();
      const Seed s{models_.target.graph.logits(), logit_grad_};
      backward(target_tape_, {&s, 1});
      detail::add_into(grad, target_tape_.input_gradient());
    }
    detail::check_gradient(grad);
    return v;
  }

 private:
  const AttackModels& models_;
  std::span<const BoundPlane> planes_;
  const AttackConfig& cfg_;
  Tape ref_tape_, target_tape_;
  std::vector<float> logit_grad_, act_;
  std::vector<std::vector<float>> plane_grads_;
  std::vector<Seed> seeds_;
};

struct D2bRun {
  Tensor x;
  std::size_t iterations = 0;
  std::size_t recoveries = 0;
  bool aborted = false;
  bool always_feasible = true;
  std::vector<TraceRow> trace;
};

/// The sign-gradient loop at a fixed initial step. On an exception signal the last feasible
/// iterate is restored and the step halved. Returns the final iterate.
inline D2bRun run_d2b(const AttackModels& models, std::span<const BoundPlane> planes,
                      const Tensor& x_nat, const AttackConfig& cfg, double step,
                      std::size_t max_iterations, bool record) {
  D2bObjective objective(models, planes, cfg);
  D2bRun run;
  run.x = x_nat;
  Tensor last_feasible = x_nat, grad;
  double best = -INFINITY;
  std::size_t stale = 0;
  while (run.iterations < max_iterations) {
    D2bObjective::Value v;
    try {
      v = objective.evaluate(run.x, grad);
    } catch (const NumericalError&) {
      run.always_feasible = false;
      if (++run.recoveries > cfg.max_recoveries) {
        run.recoveries = cfg.max_recoveries;
        run.aborted = true;
        run.x = last_feasible;
        break;
      }
      run.x = last_feasible;
      step *= 0.5;
      continue;
    }
    if (v.feasible) {
      last_feasible = run.x;
    } else {
      run.always_feasible = false;
    }
    if (v.confidence > best) {
      best = v.confidence;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
    if (record) {
      run.trace.push_back({run.iterations, v.confidence, v.prediction, v.barrier, v.smoothing, step, v.feasible, v.success});
    }
    detail::sign_step(run.x, grad, step);
    ++run.iterations;
  }
  // The last step's result has not been looked at yet.
  if (!run.aborted && run.always_feasible && run.iterations > 0) {
    try {
      run.always_feasible = objective.evaluate(run.x, grad).feasible;
    } catch (const NumericalError&) {
      run.always_feasible = false;
    }
  }
  return run;
}

/// Picks the step for one sample: the largest step whose truncated probe run stays feasible.
inline double search_step(const AttackModels& models, std::span<const BoundPlane> planes,
                          const Tensor& x_nat, const AttackConfig& cfg, bool* warning = nullptr) {
  auto probe = [&](double step) {
    if (step <= 0.0) return true;
    const D2bRun r = run_d2b(models, planes, x_nat, cfg, step, cfg.probe_iterations, false);
    return r.always_feasible && r.recoveries == 0;
  };
  return binary_search_step(probe, cfg.step_lo, cfg.step_hi, cfg.probes, warning);
}

/// Bounded-activation attack: sign-gradient descent on prediction + barrier + smoothing losses.
inline AttackResult d2b_attack(const Tensor& x_nat, const AttackModels& models,
                               std::span<const PlaneProfile> profiles, const AttackConfig& cfg) {
  std::vector<double> eps(profiles.size());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = cfg.epsilon_for(i);
  const std::vector<BoundPlane> planes = resolve_planes(models.reference, profiles, x_nat, cfg.bound_kind, eps);
  AttackResult r;
  r.step = cfg.step;
  if (r.step <= 0.0 && cfg.max_iterations > 0) r.step = search_step(models, planes, x_nat, cfg, &r.step_warning);
  D2bRun run = run_d2b(models, planes, x_nat, cfg, r.step, cfg.max_iterations, cfg.record_trace);
  r.x_adv = std::move(run.x);
  r.iterations = run.iterations;
  r.recoveries = run.recoveries;
  r.aborted = run.aborted;
  r.trace = std::move(run.trace);
  detail::finish(r, models, planes, cfg.objective);
  if (r.aborted) r.feasible = false;
  return r;
}

/// Sign-gradient pixel attack with per-pixel clipping to [x_nat - eps, x_nat + eps] and [0, 1].
inline AttackResult bim_attack(const Tensor& x_nat, const Model& target, const Objective& obj,
                               double pixel_eps, double step, std::size_t iterations, bool record = false) {
  AttackResult r;
  r.x_adv = x_nat;
  r.step = step;
  Tape tape;
  std::vector<float> logit_grad(target.spec.classes);
  const auto e = static_cast<float>(pixel_eps);
  for (std::size_t it = 0; it < iterations && pixel_eps > 0.0; ++it) {
    forward(target.graph, target.params, r.x_adv, tape);
    const double loss = prediction_loss(tape.logits().values(), obj, logit_grad);
    if (record) {
      r.trace.push_back({it, attack_confidence(tape.logits().values(), obj), loss, 0.0, 0.0, step, true,
                         attack_success(tape.logits().values(), obj)});
    }
    const Seed s{target.graph.logits(), logit_grad};
    backward(tape, {&s, 1});
    detail::check_gradient(tape.input_gradient());
    detail::sign_step(r.x_adv, tape.input_gradient(), step);
    for (std::size_t i = 0; i < r.x_adv.size(); ++i) {
      r.x_adv[i] = std::clamp(r.x_adv[i], std::max(0.0f, x_nat[i] - e), std::min(1.0f, x_nat[i] + e));
    }
    r.iterations = it + 1;
  }
  const Tensor logits = forward(target.graph, target.params, r.x_adv).logits();
  r.success = attack_success(logits.values(), obj);
  r.confidence = attack_confidence(logits.values(), obj);
  return r;
}

namespace detail {

// Clamp specs for every node of every plane, built from the resolved bounds.
struct ClampStorage {
  std::vector<std::vector<float>> lows, highs;
  std::vector<ClampSpec> specs;

  ClampStorage(const Graph& graph, std::span<const BoundPlane> planes) {
    for (const BoundPlane& bp : planes) {
      std::size_t offset = 0;
      for (NodeId n : bp.profile->plane.nodes) {
        const std::size_t len = element_count(graph.node(n).shape);
        std::vector<float> lo(len), hi(len);
        for (std::size_t i = 0; i < len; ++i) {
          lo[i] = static_cast<float>(bp.bound.low[offset + i]);
          hi[i] = static_cast<float>(bp.bound.high[offset + i]);
        }
        lows.push_back(std::move(lo));
        highs.push_back(std::move(hi));
        specs.push_back({n, {}, {}});
        offset += len;
      }
    }
    for (std::size_t i = 0; i < specs.size(); ++i) {
      specs[i].low = lows[i];
      specs[i].high = highs[i];
    }
  }
};

}  // namespace detail

/// Baseline: clip the plane's activations to their bounds inside the forward pass and optimize
/// the prediction loss through the modified dataflow. Metrics use the unmodified model.
inline AttackResult clipping_attack(const Tensor& x_nat, const Model& model,
                                    std::span<const PlaneProfile> profiles, const AttackConfig& cfg,
                                    double step, std::size_t iterations) {
  std::vector<double> eps(profiles.size());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = cfg.epsilon_for(i);
  const std::vector<BoundPlane> planes = resolve_planes(model, profiles, x_nat, cfg.bound_kind, eps);
  const detail::ClampStorage clamps(model.graph, planes);
  const ForwardOptions options{clamps.specs};
  AttackResult r;
  r.x_adv = x_nat;
  r.step = step;
  r.consistent = false;
  Tape tape;
  std::vector<float> logit_grad(model.spec.classes);
  for (std::size_t it = 0; it < iterations; ++it) {
    forward(model.graph, model.params, r.x_adv, tape, options);
    const double loss = prediction_loss(tape.logits().values(), cfg.objective, logit_grad);
    if (cfg.record_trace) {
      r.trace.push_back({it, attack_confidence(tape.logits().values(), cfg.objective), loss, 0.0, 0.0, step,
                         true, attack_success(tape.logits().values(), cfg.objective)});
    }
    const Seed s{model.graph.logits(), logit_grad};
    backward(tape, {&s, 1});
    detail::check_gradient(tape.input_gradient());
    detail::sign_step(r.x_adv, tape.input_gradient(), step);
    r.iterations = it + 1;
  }
  const AttackModels models{model, model};
  detail::finish(r, models, planes, cfg.objective);
  return r;
}

struct TwoStepOptions {
  std::size_t outer = 100;
  std::size_t inner = 10;
  double activation_step = 0.1;  // fraction of each neuron's interval width
  double input_step = 2.6e-3;
};

/// Baseline: move the plane activations one step toward the objective inside their bounds, then
/// fit the input to those activations with sign steps on the squared error.
inline AttackResult two_step_attack(const Tensor& x_nat, const Model& model,
                                    std::span<const PlaneProfile> profiles, const AttackConfig& cfg,
                                    const TwoStepOptions& opt = {}) {
  std::vector<double> eps(profiles.size());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = cfg.epsilon_for(i);
  const std::vector<BoundPlane> planes = resolve_planes(model, profiles, x_nat, cfg.bound_kind, eps);
  AttackResult r;
  r.x_adv = x_nat;
  r.step = opt.input_step;
  r.consistent = false;
  Tape tape;
  std::vector<float> logit_grad(model.spec.classes);
  std::vector<std::vector<float>> targets(planes.size()), mse_grads(planes.size());
  std::vector<Seed> seeds;
  for (std::size_t outer = 0; outer < opt.outer; ++outer) {
    forward(model.graph, model.params, r.x_adv, tape);
    const double loss = prediction_loss(tape.logits().values(), cfg.objective, logit_grad);
    if (cfg.record_trace) {
      r.trace.push_back({outer, attack_confidence(tape.logits().values(), cfg.objective), loss, 0.0, 0.0,
                         opt.input_step, true, attack_success(tape.logits().values(), cfg.objective)});
    }
    const Seed s{model.graph.logits(), logit_grad};
    backward(tape, {&s, 1});
    for (std::size_t p = 0; p < planes.size(); ++p) {
      const BoundSpec& b = planes[p].bound;
      const Plane& plane = planes[p].profile->plane;
      targets[p] = gather_plane(tape, plane);
      std::size_t k = 0;
      for (NodeId n : plane.nodes) {
        for (float g : tape.gradient(n).values()) {
          const double width = b.high[k] - b.low[k];
          const double moved = targets[p][k] - opt.activation_step * width * (g > 0.0f ? 1.0 : g < 0.0f ? -1.0 : 0.0);
          targets[p][k] = static_cast<float>(std::clamp(moved, b.low[k], b.high[k]));
          ++k;
        }
      }
    }
    for (std::size_t inner = 0; inner < opt.inner; ++inner) {
      forward(model.graph, model.params, r.x_adv, tape);
      seeds.clear();
      for (std::size_t p = 0; p < planes.size(); ++p) {
        const Plane& plane = planes[p].profile->plane;
        const std::vector<float> act = gather_plane(tape, plane);
        mse_grads[p].resize(act.size());
        for (std::size_t k = 0; k < act.size(); ++k) {
          mse_grads[p][k] = 2.0f * (act[k] - targets[p][k]) / static_cast<float>(act.size());
        }
        std::size_t offset = 0;
        for (NodeId n : plane.nodes) {
          const std::size_t len = element_count(model.graph.node(n).shape);
          seeds.push_back({n, std::span<const float>(mse_grads[p]).subspan(offset, len)});
          offset += len;
        }
      }
      backward(tape, seeds);
      detail::check_gradient(tape.input_gradient());
      detail::sign_step(r.x_adv, tape.input_gradient(), opt.input_step);
    }
    r.iterations = outer + 1;
  }
  const AttackModels models{model, model};
  detail::finish(r, models, planes, cfg.objective);
  return r;
}

struct CalibrationSample {
  Tensor image;
  Objective objective;
};

/// Mean over samples of the BIM result's quantile distance on each reference plane. Throws
/// CalibrationError when BIM succeeds on none of the samples.
inline std::vector<double> calibrate_epsilon(const Model& reference, std::span<const PlaneProfile> profiles,
                                             const Model& target, std::span<const CalibrationSample> samples,
                                             double bim_eps = 0.04, std::size_t iterations = 100) {
  if (samples.size() < 10) throw UsageError("calibration needs at least 10 samples");
  if (profiles.empty()) throw UsageError("calibration needs at least one plane");
  std::vector<double> sum(profiles.size(), 0.0);
  std::vector<AttackResult> results(samples.size());
  std::vector<std::vector<double>> dist(samples.size(), std::vector<double>(profiles.size(), 0.0));
  parallel_for(samples.size(), [&](std::size_t s) {
    results[s] = bim_attack(samples[s].image, target, samples[s].objective, bim_eps, bim_eps / 10.0, iterations);
    const Tape nat = forward(reference.graph, reference.params, samples[s].image);
    const Tape adv = forward(reference.graph, reference.params, results[s].x_adv);
    for (std::size_t p = 0; p < profiles.size(); ++p) {
      dist[s][p] = quantile_distance(profiles[p], gather_plane(nat, profiles[p].plane),
                                     gather_plane(adv, profiles[p].plane));
    }
  });
  std::size_t successes = 0;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    successes += results[s].success;
    for (std::size_t p = 0; p < profiles.size(); ++p) sum[p] += dist[s][p];
  }
  if (bim_eps > 0.0 && successes == 0) throw CalibrationError("BIM succeeded on none of the calibration samples");
  for (double& v : sum) v /= static_cast<double>(samples.size());
  return sum;
}

}  // namespace deepbound
