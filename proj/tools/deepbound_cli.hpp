// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. run() parses arguments, executes one command and maps library errors to
// exit codes; main.cpp is a thin wrapper so the tests can drive commands in-process.

#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deepbound/deepbound.hpp"

namespace deepbound::cli {

namespace fs = std::filesystem;

enum ExitCode : int { ok = 0, usage = 2, format = 3, numerical = 4 };

inline constexpr std::size_t default_data_seed = 7;
inline constexpr std::size_t default_per_class = 200;

struct DataSource {
  std::string dir;
  std::uint64_t seed = default_data_seed;
  std::size_t per_class = default_per_class;

  LabeledDataset load() const { return dir.empty() ? generate_dataset(seed, per_class) : import_dataset(dir); }
};

inline void add_data_options(CLI::App* cmd, DataSource& d) {
  cmd->add_option("--data", d.dir, "Dataset directory written by the dataset command");
  cmd->add_option("--data-seed", d.seed, "Seed of the generated dataset when --data is absent");
  cmd->add_option("--per-class", d.per_class, "Generated samples per class")->check(CLI::PositiveNumber);
}

inline std::string sample_name(std::size_t i, const char* ext) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "sample_%05zu%s", i, ext);
  return buf;
}

inline Objective make_objective(const std::string& mode, int label, std::size_t index) {
  if (mode == "targeted") {
    return {AttackMode::targeted, static_cast<int>((label + 1 + static_cast<int>(index % 9)) % 10), 5};
  }
  return {AttackMode::untargeted, label, default_top_k(class_count)};
}

/// Held-out samples the target classifies correctly, in index order, skipping `first` of them.
inline std::vector<std::size_t> pick_samples(const Model& target, const LabeledDataset& data, std::size_t count,
                                             std::size_t first) {
  const std::vector<std::size_t> held = split_80_20(data).held_out;
  std::vector<int> correct(held.size());
  parallel_for(held.size(), [&](std::size_t k) {
    correct[k] = predict(target, data.images[held[k]]) == data.labels[held[k]];
  });
  std::vector<std::size_t> out;
  std::size_t skipped = 0;
  for (std::size_t k = 0; k < held.size() && out.size() < count; ++k) {
    if (!correct[k]) continue;
    if (skipped++ < first) continue;
    out.push_back(held[k]);
  }
  return out;
}

inline std::vector<PlaneProfile> load_profiles_checked(const std::string& path, const Model& model) {
  if (path.empty()) return {};
  return load_profiles(path, model.graph);
}

inline std::string csv_bool(bool b) { return b ? "1" : "0"; }

// ---------------------------------------------------------------------------------------------
// dataset

struct DatasetArgs {
  std::uint64_t seed = 0;
  std::size_t per_class = default_per_class;
  std::string out = "data";
};

inline void cmd_dataset(const DatasetArgs& a, std::ostream& out) {
  const LabeledDataset data = generate_dataset(a.seed, a.per_class);
  export_dataset(a.out, data);
  out << "wrote " << data.size() << " images to " << a.out << "\n";
}

// ---------------------------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string arch = "res-cnn";
  std::uint64_t seed = 0;
  TrainOptions options;
  DataSource data;
  std::string out = "model.dbw";
};

inline void cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const LabeledDataset data = a.data.load();
  TrainOptions opt = a.options;
  opt.seed = a.seed;
  const TrainResult r = train(ModelSpec::named(a.arch), data, opt, [&](std::size_t epoch, double loss) {
    err << "epoch " << epoch + 1 << "/" << opt.epochs << " loss " << format_number(loss) << "\n";
  });
  save_model(a.out, r.model.params);
  CsvTable report({"architecture", "seed", "epochs", "samples", "final_loss", "held_out_accuracy"});
  report.add_row({a.arch, std::to_string(a.seed), std::to_string(opt.epochs), std::to_string(data.size()),
                  r.epoch_loss.empty() ? "nan" : format_number(r.epoch_loss.back()),
                  format_number(r.held_out_accuracy)});
  report.save(a.out + ".csv");
  out << "held-out accuracy " << format_number(r.held_out_accuracy) << "\n";
}

// ---------------------------------------------------------------------------------------------
// profile

struct ProfileArgs {
  std::string model;
  std::uint64_t seed = 0;
  DataSource data;
  std::size_t top = 3;
  std::vector<std::string> planes;  // explicit selection by name, overrides ranking
  std::string out = "profile";
};

inline void write_density(const fs::path& path, const PlaneProfile& p) {
  // Representative neuron: the non-degenerate one whose score is the plane's median.
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < p.neurons.size(); ++i) {
    if (!p.neurons[i].degenerate()) live.push_back(i);
  }
  CsvTable t({"neuron", "p", "value", "density"});
  if (!live.empty()) {
    std::stable_sort(live.begin(), live.end(), [&](std::size_t a, std::size_t b) { return p.scores[a] < p.scores[b]; });
    const std::size_t n = live[live.size() / 2];
    const auto table = p.neurons[n].table();
    for (std::size_t j = 0; j < table.size(); ++j) {
      t.add_row({std::to_string(n), format_number(static_cast<double>(j) / quantile_steps), format_number(table[j]),
                 format_number(p.neurons[n].density(table[j]))});
    }
  }
  t.save(path);
}

inline void cmd_profile(const ProfileArgs& a, std::ostream& out, std::ostream& err) {
  const Model model = load_any_model(a.model);
  const LabeledDataset all = a.data.load();
  const LabeledDataset data = subset(all, split_80_20(all).train);
  const std::vector<Plane> planes = enumerate_planes(model.graph);
  const std::vector<PlaneProfile> profiles = profile_planes(model, data, planes);

  std::vector<PlaneProfile> candidates;
  for (const PlaneProfile& p : profiles) {
    if (is_selectable(model.graph, p.plane)) candidates.push_back(p);
  }
  std::vector<std::size_t> chosen;
  if (!a.planes.empty()) {
    for (const std::string& name : a.planes) chosen.push_back(plane_by_name(planes, name).id);
  } else {
    std::size_t k = a.top;
    if (k > candidates.size()) {
      err << "warning: " << k << " planes requested, " << candidates.size() << " available; using all\n";
      k = candidates.size();
    }
    chosen = select_planes(candidates, k);
  }

  CsvTable table({"plane_id", "plane", "neurons", "selectable", "aggregate", "selected"});
  for (const PlaneProfile& p : profiles) {
    const auto rank = std::find(chosen.begin(), chosen.end(), p.plane.id);
    table.add_row({std::to_string(p.plane.id), p.plane.name, std::to_string(p.plane.neuron_count),
                   csv_bool(is_selectable(model.graph, p.plane)), format_number(p.aggregate),
                   rank == chosen.end() ? "0" : std::to_string(rank - chosen.begin() + 1)});
  }
  const fs::path dir = a.out;
  table.save(dir / "planes.csv");

  std::vector<PlaneProfile> selected;
  for (std::size_t id : chosen) {
    selected.push_back(profiles.at(id));
    write_density(dir / ("density_" + std::to_string(id) + ".csv"), profiles.at(id));
    out << "plane " << id << " " << profiles.at(id).plane.name << " aggregate "
        << format_number(profiles.at(id).aggregate) << "\n";
  }
  save_profiles(dir / "profiles.dbp", selected);
}

// ---------------------------------------------------------------------------------------------
// calibrate

struct CalibrateArgs {
  std::string model;
  std::string target;
  std::string profiles;
  std::uint64_t seed = 0;
  DataSource data;
  std::string mode = "untargeted";
  std::size_t samples = 20;
  double bim_eps = 0.04;
  std::size_t iterations = 100;
  std::string out = "calibration.csv";
};

inline void cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
  const Model reference = load_any_model(a.model);
  const Model target = a.target.empty() ? reference : load_any_model(a.target);
  const std::vector<PlaneProfile> profiles = load_profiles_checked(a.profiles, reference);
  if (profiles.empty()) throw UsageError("calibration needs --profiles with at least one plane");
  const LabeledDataset data = a.data.load();
  std::vector<CalibrationSample> samples;
  for (std::size_t i : pick_samples(target, data, a.samples, 0)) {
    samples.push_back({data.images[i], make_objective(a.mode, data.labels[i], i)});
  }
  const std::vector<double> eps = calibrate_epsilon(reference, profiles, target, samples, a.bim_eps, a.iterations);
  CsvTable table({"plane_id", "plane", "eps_base"});
  for (std::size_t p = 0; p < profiles.size(); ++p) {
    table.add_row({std::to_string(profiles[p].plane.id), profiles[p].plane.name, format_number(eps[p])});
    out << "plane " << profiles[p].plane.name << " eps_base " << format_number(eps[p]) << "\n";
  }
  table.save(a.out);
}

// ---------------------------------------------------------------------------------------------
// attack

struct AttackArgs {
  std::string method = "d2b";
  std::string model;
  std::string target;
  std::string profiles;
  std::string calibration;
  std::uint64_t seed = 0;
  DataSource data;
  std::vector<double> eps;
  std::optional<double> eps_rel;  // percent of the calibrated base
  std::string mode = "untargeted";
  std::string bound = "quantile";
  std::string barrier = "poly";
  double alpha = 10.0;
  std::optional<std::size_t> max_iterations;
  std::size_t patience = 50;
  double step = 0.0;
  std::size_t samples = 20;
  std::size_t first = 0;
  std::size_t outer = 100;
  std::size_t inner = 10;
  std::string setting;
  std::string out = "attack";
};

inline std::vector<double> resolve_epsilon(const AttackArgs& a, std::span<const PlaneProfile> profiles) {
  if (a.eps_rel) {
    if (a.method == "bim") throw UsageError("--eps-rel applies to bounded-activation methods only");
    if (a.calibration.empty()) {
      throw UsageError("--eps-rel needs --calibration; run `deepbound calibrate` first to produce it");
    }
    const CsvTable calib = CsvTable::load(a.calibration);
    const std::size_t id_col = calib.column("plane_id"), eps_col = calib.column("eps_base");
    std::vector<double> eps;
    for (const PlaneProfile& p : profiles) {
      const auto row = std::find_if(calib.rows().begin(), calib.rows().end(), [&](const auto& r) {
        return parse_number(r[id_col]) == static_cast<double>(p.plane.id);
      });
      if (row == calib.rows().end()) throw FormatError(a.calibration + ": no entry for plane " + p.plane.name);
      eps.push_back(std::clamp(parse_number((*row)[eps_col]) * *a.eps_rel / 100.0, 1e-6, 1.0));
    }
    return eps;
  }
  if (!a.eps.empty()) {
    if (a.method != "bim" && a.eps.size() != 1 && a.eps.size() != profiles.size()) {
      throw UsageError("--eps needs one value or one per plane");
    }
    return a.eps;
  }
  if (a.method == "bim") return {0.04};
  throw UsageError("--eps or --eps-rel is required for method " + a.method);
}

inline std::string default_setting(const AttackArgs& a, const std::vector<double>& eps) {
  std::string s = a.mode;
  if (a.eps_rel) {
    s += " eps-rel=" + format_number(*a.eps_rel);
  } else {
    s += " eps=";
    for (std::size_t i = 0; i < eps.size(); ++i) s += (i ? ";" : "") + format_number(eps[i]);
  }
  if (a.method != "bim") s += " " + a.bound;
  if (a.method == "d2b") s += " " + a.barrier + " alpha=" + format_number(a.alpha);
  return s;
}

inline void save_trace(const fs::path& path, const std::vector<TraceRow>& trace) {
  CsvTable t({"iteration", "confidence", "prediction_loss", "barrier_loss", "smoothing_loss", "step", "feasible",
              "success"});
  for (const TraceRow& r : trace) {
    t.add_row({std::to_string(r.iteration), format_number(r.confidence), format_number(r.prediction_loss),
               format_number(r.barrier_loss), format_number(r.smoothing_loss), format_number(r.step),
               csv_bool(r.feasible), csv_bool(r.success)});
  }
  t.save(path);
}

inline void cmd_attack(const AttackArgs& a, std::ostream& out) {
  const Model reference = load_any_model(a.model);
  const Model target = a.target.empty() ? reference : load_any_model(a.target);
  const std::vector<PlaneProfile> profiles = load_profiles_checked(a.profiles, reference);
  if (a.method != "bim" && profiles.empty()) throw UsageError("method " + a.method + " needs --profiles");
  if ((a.method == "clip" || a.method == "two-step") && !a.target.empty()) {
    throw UsageError("method " + a.method + " attacks the profiled model only; drop --target");
  }
  const std::vector<double> eps = resolve_epsilon(a, profiles);
  const LabeledDataset data = a.data.load();
  const std::vector<std::size_t> picked = pick_samples(target, data, a.samples, a.first);

  AttackConfig cfg;
  cfg.bound_kind = parse_bound_kind(a.bound);
  cfg.epsilon = eps;
  cfg.barrier = a.barrier == "linear" ? BarrierKind::linear : BarrierKind::polynomial;
  cfg.weights.alpha = a.alpha;
  cfg.patience = a.patience;
  cfg.step = a.step;
  if (a.max_iterations) cfg.max_iterations = *a.max_iterations;
  for (double e : eps) check_epsilon(e);

  const std::vector<Plane> planes = enumerate_planes(reference.graph);
  std::vector<AttackResult> results(picked.size());
  std::vector<std::vector<double>> qdist(picked.size());
  std::vector<double> ssims(picked.size());
  parallel_for(picked.size(), [&](std::size_t k) {
    const std::size_t i = picked[k];
    const Tensor& x = data.images[i];
    AttackConfig c = cfg;
    c.objective = make_objective(a.mode, data.labels[i], i);
    if (a.method == "d2b") {
      results[k] = d2b_attack(x, AttackModels{target, reference}, profiles, c);
    } else if (a.method == "bim") {
      const std::size_t iters = a.max_iterations.value_or(100);
      results[k] = bim_attack(x, target, c.objective, eps.front(), a.step > 0.0 ? a.step : eps.front() / 10.0,
                              iters, true);
    } else if (a.method == "clip") {
      results[k] = clipping_attack(x, reference, profiles, c, a.step > 0.0 ? a.step : TwoStepOptions{}.input_step,
                                   a.max_iterations.value_or(300));
    } else {
      TwoStepOptions opt;
      opt.outer = a.outer;
      opt.inner = a.inner;
      if (a.step > 0.0) opt.input_step = a.step;
      results[k] = two_step_attack(x, reference, profiles, c, opt);
    }
    const Tape nat = forward(reference.graph, reference.params, x);
    const Tape adv = forward(reference.graph, reference.params, results[k].x_adv);
    for (const PlaneProfile& p : profiles) {
      qdist[k].push_back(quantile_distance(p, gather_plane(nat, p.plane), gather_plane(adv, p.plane)));
    }
    ssims[k] = ssim(x, results[k].x_adv);
  });

  const fs::path dir = a.out;
  const std::string setting = a.setting.empty() ? default_setting(a, eps) : a.setting;
  std::vector<std::string> header{"sample", "label",   "target",   "mode",      "method",     "setting",
                                  "success", "confidence", "iterations", "step", "l2",     "linf",
                                  "ssim",   "feasible", "occupancy", "consistent", "aborted"};
  for (const PlaneProfile& p : profiles) header.push_back("qdist:" + p.plane.name);
  CsvTable metrics(header);
  std::size_t successes = 0;
  for (std::size_t k = 0; k < picked.size(); ++k) {
    const std::size_t i = picked[k];
    const AttackResult& r = results[k];
    const Objective obj = make_objective(a.mode, data.labels[i], i);
    const PixelDistances d = pixel_distances(data.images[i], r.x_adv);
    const bool bounded = a.method != "bim" || !profiles.empty();
    std::vector<std::string> row{std::to_string(i),
                                 std::to_string(data.labels[i]),
                                 std::to_string(obj.label),
                                 a.mode,
                                 a.method,
                                 setting,
                                 csv_bool(r.success),
                                 format_number(r.confidence),
                                 std::to_string(r.iterations),
                                 format_number(r.step),
                                 format_number(d.l2),
                                 format_number(d.linf),
                                 format_number(ssims[k]),
                                 bounded && a.method != "bim" ? csv_bool(r.feasible) : "",
                                 bounded && a.method != "bim" ? format_number(r.occupancy) : "",
                                 csv_bool(r.consistent),
                                 csv_bool(r.aborted)};
    for (double q : qdist[k]) row.push_back(format_number(q));
    metrics.add_row(std::move(row));
    save_ppm(dir / "nat" / sample_name(i, ".ppm"), data.images[i]);
    save_tensor(dir / "nat" / sample_name(i, ".dbt"), data.images[i]);
    save_ppm(dir / "adv" / sample_name(i, ".ppm"), r.x_adv);
    save_tensor(dir / "adv" / sample_name(i, ".dbt"), r.x_adv);
    save_trace(dir / "trace" / sample_name(i, ".csv"), r.trace);
    successes += r.success;
  }
  metrics.save(dir / "metrics.csv");
  out << a.method << " [" << setting << "]: " << successes << "/" << picked.size() << " successful\n";
}

// ---------------------------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string model;
  std::uint64_t seed = 0;
  DataSource data;
  std::string adversarial;  // attack output directory for transfer evaluation
  std::string out;
};

struct AttackOutput {
  std::vector<std::size_t> samples;
  std::vector<Tensor> images;
  std::vector<Objective> objectives;
};

inline AttackOutput read_attack_output(const fs::path& dir) {
  const CsvTable m = CsvTable::load(dir / "metrics.csv");
  const std::size_t s_col = m.column("sample"), t_col = m.column("target"), mode_col = m.column("mode");
  AttackOutput o;
  for (const auto& row : m.rows()) {
    const auto i = static_cast<std::size_t>(parse_number(row[s_col]));
    o.samples.push_back(i);
    o.images.push_back(load_tensor(dir / "adv" / sample_name(i, ".dbt")));
    const AttackMode mode = row[mode_col] == "targeted" ? AttackMode::targeted : AttackMode::untargeted;
    o.objectives.push_back({mode, static_cast<int>(parse_number(row[t_col])),
                            mode == AttackMode::targeted ? std::size_t{5} : default_top_k(class_count)});
  }
  return o;
}

inline void cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const Model model = load_any_model(a.model);
  CsvTable table({"metric", "samples", "value"});
  if (a.adversarial.empty()) {
    const LabeledDataset all = a.data.load();
    const LabeledDataset held = subset(all, split_80_20(all).held_out);
    const double acc = accuracy(model, held);
    table.add_row({"held_out_accuracy", std::to_string(held.size()), format_number(acc)});
    out << "held-out accuracy " << format_number(acc) << "\n";
  } else {
    const AttackOutput o = read_attack_output(a.adversarial);
    const std::optional<double> rate = transfer_eval(o.images, o.objectives, model);
    table.add_row({"transfer_success", std::to_string(o.images.size()), rate ? format_number(*rate) : ""});
    out << "transfer success " << (rate ? format_number(*rate) : "absent (no adversarial samples)") << "\n";
  }
  if (!a.out.empty()) table.save(a.out);
}

// ---------------------------------------------------------------------------------------------
// detect

struct DetectArgs {
  std::string model;
  std::uint64_t seed = 0;
  DataSource data;
  std::string inputs;
  std::vector<std::string> squeezers = {"bit:5", "median:2"};
  std::string out = "detect";
};

inline std::vector<Squeezer> parse_squeezers(const std::vector<std::string>& names) {
  std::vector<Squeezer> out;
  for (const std::string& n : names) {
    const auto colon = n.find(':');
    const std::string kind = n.substr(0, colon);
    const int param = colon == std::string::npos ? 0 : static_cast<int>(parse_number(n.substr(colon + 1)));
    if (kind == "bit") {
      out.push_back(Squeezer::bit_depth(colon == std::string::npos ? 5 : param));
    } else if (kind == "median") {
      out.push_back(Squeezer::median(colon == std::string::npos ? 2 : param));
    } else {
      throw UsageError("unknown squeezer \"" + n + "\" (use bit:N or median:N)");
    }
  }
  return out;
}

inline void cmd_detect(const DetectArgs& a, std::ostream& out) {
  const Model model = load_any_model(a.model);
  const std::vector<Squeezer> squeezers = parse_squeezers(a.squeezers);
  const LabeledDataset all = a.data.load();
  const std::vector<std::size_t> held = split_80_20(all).held_out;
  std::vector<double> benign(held.size());
  parallel_for(held.size(), [&](std::size_t k) { benign[k] = squeeze_score(model, all.images[held[k]], squeezers); });
  const double threshold = calibrate_threshold(benign);

  CsvTable rows({"source", "sample", "score", "flagged"});
  std::size_t benign_flags = 0, adv_flags = 0;
  for (std::size_t k = 0; k < held.size(); ++k) {
    const bool f = !squeezers.empty() && benign[k] > threshold;
    benign_flags += f;
    rows.add_row({"benign", std::to_string(held[k]), format_number(benign[k]), csv_bool(f)});
  }
  std::optional<AttackOutput> adv;
  if (!a.inputs.empty()) {
    adv = read_attack_output(a.inputs);
    std::vector<double> scores(adv->images.size());
    parallel_for(scores.size(), [&](std::size_t k) { scores[k] = squeeze_score(model, adv->images[k], squeezers); });
    for (std::size_t k = 0; k < scores.size(); ++k) {
      const bool f = !squeezers.empty() && scores[k] > threshold;
      adv_flags += f;
      rows.add_row({"adversarial", std::to_string(adv->samples[k]), format_number(scores[k]), csv_bool(f)});
    }
  }
  const fs::path dir = a.out;
  rows.save(dir / "detections.csv");
  const double benign_rate = static_cast<double>(benign_flags) / static_cast<double>(held.size());
  CsvTable summary({"threshold", "benign", "benign_flag_rate", "adversarial", "adversarial_flag_rate"});
  const bool any_adv = adv && !adv->images.empty();
  summary.add_row({format_number(threshold), std::to_string(held.size()), format_number(benign_rate),
                   adv ? std::to_string(adv->images.size()) : "0",
                   any_adv ? format_number(static_cast<double>(adv_flags) / static_cast<double>(adv->images.size()))
                           : ""});
  summary.save(dir / "summary.csv");
  out << "threshold " << format_number(threshold) << ", benign flagged " << format_number(benign_rate);
  if (any_adv) out << ", adversarial flagged " << adv_flags << "/" << adv->images.size();
  out << "\n";
}

// ---------------------------------------------------------------------------------------------
// diff

struct DiffArgs {
  std::string natural;
  std::string adversarial;
  std::string in;  // attack output directory: maps for every sample
  double scale = 20.0;
  std::string out;
};

inline void cmd_diff(const DiffArgs& a, std::ostream& out) {
  if (!a.in.empty()) {
    const fs::path dir = a.in;
    const CsvTable m = CsvTable::load(dir / "metrics.csv");
    const std::size_t s_col = m.column("sample");
    const fs::path target = a.out.empty() ? dir / "diff" : fs::path(a.out);
    CsvTable energies({"sample", "checkerboard_energy"});
    for (const auto& row : m.rows()) {
      const auto i = static_cast<std::size_t>(parse_number(row[s_col]));
      const Tensor nat = load_tensor(dir / "nat" / sample_name(i, ".dbt"));
      const Tensor adv = load_tensor(dir / "adv" / sample_name(i, ".dbt"));
      save_ppm(target / sample_name(i, ".ppm"), differential_map(nat, adv, a.scale));
      energies.add_row({std::to_string(i), format_number(checkerboard_energy(difference(nat, adv)))});
    }
    energies.save(target / "energy.csv");
    out << "wrote " << m.size() << " differential maps to " << target.string() << "\n";
    return;
  }
  if (a.natural.empty() || a.adversarial.empty() || a.out.empty()) {
    throw UsageError("diff needs --in DIR, or --natural, --adversarial and --out");
  }
  const Tensor nat = load_image(a.natural), adv = load_image(a.adversarial);
  save_ppm(a.out, differential_map(nat, adv, a.scale));
  out << "checkerboard energy " << format_number(checkerboard_energy(difference(nat, adv))) << "\n";
}

// ---------------------------------------------------------------------------------------------
// report

struct ReportArgs {
  std::vector<std::string> in;
  std::string out = "report";
};

struct SampleRecord {
  std::map<std::string, std::string> cells;
  fs::path trace;
};

inline double mean_of(const std::vector<SampleRecord>& rows, const std::string& key, bool* present = nullptr) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    const auto it = r.cells.find(key);
    if (it == r.cells.end() || it->second.empty()) continue;
    sum += parse_number(it->second);
    ++n;
  }
  if (present) *present = n > 0;
  return n ? sum / static_cast<double>(n) : 0.0;
}

inline void cmd_report(const ReportArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<fs::path> files;
  for (const std::string& root : a.in) {
    if (!fs::exists(root)) throw FormatError("no such directory " + root);
    std::vector<fs::path> found;
    if (fs::is_regular_file(root)) {
      found.push_back(root);
    } else {
      for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file() && e.path().filename() == "metrics.csv") found.push_back(e.path());
      }
    }
    std::sort(found.begin(), found.end());
    files.insert(files.end(), found.begin(), found.end());
  }
  if (files.empty()) err << "warning: no metrics.csv found; writing empty tables\n";

  std::vector<std::pair<std::string, std::string>> group_order;
  std::map<std::pair<std::string, std::string>, std::vector<SampleRecord>> groups;
  std::vector<std::string> planes;
  for (const fs::path& f : files) {
    const CsvTable m = CsvTable::load(f);
    for (const std::string& h : m.header()) {
      if (h.rfind("qdist:", 0) == 0 && std::find(planes.begin(), planes.end(), h) == planes.end()) planes.push_back(h);
    }
    for (const auto& row : m.rows()) {
      SampleRecord rec;
      for (std::size_t c = 0; c < row.size(); ++c) rec.cells[m.header()[c]] = row[c];
      rec.trace = f.parent_path() / "trace" / sample_name(static_cast<std::size_t>(parse_number(rec.cells["sample"])), ".csv");
      const auto key = std::make_pair(rec.cells["method"], rec.cells["setting"]);
      if (!groups.count(key)) group_order.push_back(key);
      groups[key].push_back(std::move(rec));
    }
  }

  std::vector<std::string> header{"method",    "setting", "samples",       "success_rate", "mean_confidence",
                                  "mean_l2",   "mean_linf", "mean_ssim",   "feasible_rate", "mean_occupancy"};
  header.insert(header.end(), planes.begin(), planes.end());
  CsvTable summary(header);
  CsvTable curves({"method", "setting", "iteration", "success_rate", "in_bound_rate"});
  for (const auto& key : group_order) {
    const auto& rows = groups[key];
    std::vector<std::string> line{key.first, key.second, std::to_string(rows.size())};
    for (const char* col : {"success", "confidence", "l2", "linf", "ssim", "feasible", "occupancy"}) {
      bool present = false;
      const double v = mean_of(rows, col, &present);
      line.push_back(present ? format_number(v) : "");
    }
    for (const std::string& p : planes) {
      bool present = false;
      const double v = mean_of(rows, p, &present);
      line.push_back(present ? format_number(v) : "");
    }
    summary.add_row(std::move(line));

    // Success and in-bound rate after each iteration; a sample that stopped early keeps its last state.
    std::vector<CsvTable> traces;
    std::size_t length = 0;
    for (const auto& r : rows) {
      if (!fs::exists(r.trace)) continue;
      traces.push_back(CsvTable::load(r.trace));
      length = std::max(length, traces.back().size());
    }
    for (std::size_t t = 0; t < length; ++t) {
      double succ = 0.0, inb = 0.0;
      std::size_t n = 0;
      for (const CsvTable& tr : traces) {
        if (tr.size() == 0) continue;
        const auto& row = tr.rows()[std::min(t, tr.size() - 1)];
        succ += parse_number(row[tr.column("success")]);
        inb += parse_number(row[tr.column("feasible")]);
        ++n;
      }
      if (n == 0) continue;
      curves.add_row({key.first, key.second, std::to_string(t), format_number(succ / static_cast<double>(n)),
                      format_number(inb / static_cast<double>(n))});
    }
  }
  const fs::path dir = a.out;
  summary.save(dir / "summary.csv");
  curves.save(dir / "curves.csv");
  out << "aggregated " << group_order.size() << " group(s) from " << files.size() << " file(s)\n";
}

// ---------------------------------------------------------------------------------------------
// entry point

/// Splices key=value lines of --config FILE in front of the command-line flags so the latter win.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file");
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (path.empty()) return args;
  const std::string text = read_file(path);
  std::vector<std::string> injected;
  std::size_t pos = 0, line_no = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path + ":" + std::to_string(line_no) + ": expected key=value");
    injected.push_back("--" + trim(line.substr(0, eq)) + "=" + trim(line.substr(eq + 1)));
  }
  // Config flags go right after the subcommand name.
  std::size_t at = 1;
  while (at < args.size() && args[at].rfind("-", 0) == 0) ++at;
  at = std::min(at + 1, args.size());
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), injected.begin(), injected.end());
  return args;
}

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Bounded-activation adversarial attacks on small image classifiers", "deepbound"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_help_all_flag("--help-all", "Help for every command");
  const auto archs = CLI::IsMember({"plain-cnn", "res-cnn"});
  const auto modes = CLI::IsMember({"untargeted", "targeted"});

  DatasetArgs dataset;
  auto* c_dataset = app.add_subcommand("dataset", "Generate the synthetic dataset as PPM files");
  c_dataset->add_option("--seed", dataset.seed, "Generation seed")->required();
  c_dataset->add_option("--per-class", dataset.per_class, "Samples per class")->check(CLI::PositiveNumber);
  c_dataset->add_option("--out", dataset.out, "Output directory");

  TrainArgs train_args;
  auto* c_train = app.add_subcommand("train", "Train a classifier");
  c_train->add_option("--arch", train_args.arch, "plain-cnn or res-cnn")->check(archs);
  c_train->add_option("--seed", train_args.seed, "Training seed")->required();
  c_train->add_option("--epochs", train_args.options.epochs, "Epochs");
  c_train->add_option("--lr", train_args.options.lr, "Learning rate")->check(CLI::PositiveNumber);
  c_train->add_option("--batch", train_args.options.batch, "Minibatch size")->check(CLI::PositiveNumber);
  c_train->add_option("--out", train_args.out, "Weights file");
  add_data_options(c_train, train_args.data);

  ProfileArgs profile;
  auto* c_profile = app.add_subcommand("profile", "Profile candidate planes and select the most normal ones");
  c_profile->add_option("--model", profile.model, "Weights file")->required();
  c_profile->add_option("--seed", profile.seed, "Run seed")->required();
  c_profile->add_option("--top", profile.top, "Planes to select");
  c_profile->add_option("--planes", profile.planes, "Select these planes by name instead")->delimiter(',');
  c_profile->add_option("--out", profile.out, "Output directory");
  add_data_options(c_profile, profile.data);

  CalibrateArgs calib;
  auto* c_calib = app.add_subcommand("calibrate", "Measure the base epsilon from BIM outputs");
  c_calib->add_option("--model", calib.model, "Reference weights")->required();
  c_calib->add_option("--target", calib.target, "Target weights (default: the reference)");
  c_calib->add_option("--profiles", calib.profiles, "Profile file from the profile command")->required();
  c_calib->add_option("--seed", calib.seed, "Run seed")->required();
  c_calib->add_option("--mode", calib.mode, "untargeted or targeted")->check(modes);
  c_calib->add_option("--samples", calib.samples, "Calibration samples");
  c_calib->add_option("--bim-eps", calib.bim_eps, "BIM pixel bound");
  c_calib->add_option("--iterations", calib.iterations, "BIM iterations");
  c_calib->add_option("--out", calib.out, "Calibration CSV");
  add_data_options(c_calib, calib.data);

  AttackArgs attack;
  auto* c_attack = app.add_subcommand("attack", "Generate adversarial examples");
  c_attack->add_option("--method", attack.method, "d2b, bim, clip or two-step")
      ->check(CLI::IsMember({"d2b", "bim", "clip", "two-step"}));
  c_attack->add_option("--model", attack.model, "Reference weights")->required();
  c_attack->add_option("--target", attack.target, "Target weights (default: the reference)");
  c_attack->add_option("--profiles", attack.profiles, "Profile file");
  c_attack->add_option("--calibration", attack.calibration, "Calibration CSV for --eps-rel");
  c_attack->add_option("--seed", attack.seed, "Run seed")->required();
  c_attack->add_option("--eps", attack.eps, "Absolute epsilon: quantile units, or the pixel bound for bim")
      ->delimiter(',');
  c_attack->add_option("--eps-rel", attack.eps_rel, "Epsilon as a percentage of the calibrated base")
      ->check(CLI::PositiveNumber);
  c_attack->add_option("--mode", attack.mode, "untargeted or targeted")->check(modes);
  c_attack->add_option("--bound", attack.bound, "quantile or minmax")->check(CLI::IsMember({"quantile", "minmax"}));
  c_attack->add_option("--barrier", attack.barrier, "poly or linear")->check(CLI::IsMember({"poly", "linear"}));
  c_attack->add_option("--alpha", attack.alpha, "Smoothing weight");
  c_attack->add_option("--max-iter", attack.max_iterations, "Iteration cap");
  c_attack->add_option("--patience", attack.patience, "Stop after this many iterations without improvement");
  c_attack->add_option("--step", attack.step, "Fixed step (d2b searches one per sample when absent)");
  c_attack->add_option("--samples", attack.samples, "Number of samples");
  c_attack->add_option("--first", attack.first, "Eligible samples to skip");
  c_attack->add_option("--outer", attack.outer, "two-step outer iterations");
  c_attack->add_option("--inner", attack.inner, "two-step inner iterations");
  c_attack->add_option("--setting", attack.setting, "Label for grouping in reports");
  c_attack->add_option("--out", attack.out, "Output directory");
  add_data_options(c_attack, attack.data);

  EvaluateArgs eval;
  auto* c_eval = app.add_subcommand("evaluate", "Held-out accuracy, or transfer success of attack outputs");
  c_eval->add_option("--model", eval.model, "Weights file")->required();
  c_eval->add_option("--seed", eval.seed, "Run seed")->required();
  c_eval->add_option("--adversarial", eval.adversarial, "Attack output directory");
  c_eval->add_option("--out", eval.out, "Result CSV");
  add_data_options(c_eval, eval.data);

  DetectArgs detect_args;
  auto* c_detect = app.add_subcommand("detect", "Feature-squeezing detection");
  c_detect->add_option("--model", detect_args.model, "Weights file")->required();
  c_detect->add_option("--seed", detect_args.seed, "Run seed")->required();
  c_detect->add_option("--inputs", detect_args.inputs, "Attack output directory");
  c_detect->add_option("--squeezers", detect_args.squeezers, "bit:N and/or median:N")->delimiter(',');
  c_detect->add_option("--out", detect_args.out, "Output directory");
  add_data_options(c_detect, detect_args.data);

  DiffArgs diff;
  auto* c_diff = app.add_subcommand("diff", "Differential maps of adversarial perturbations");
  c_diff->add_option("--in", diff.in, "Attack output directory");
  c_diff->add_option("--natural", diff.natural, "Natural image (.ppm or .dbt)");
  c_diff->add_option("--adversarial", diff.adversarial, "Adversarial image (.ppm or .dbt)");
  c_diff->add_option("--scale", diff.scale, "Amplification of the difference");
  c_diff->add_option("--out", diff.out, "Output PPM, or directory with --in");

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "Aggregate attack metrics into tables and curves");
  c_report->add_option("--in", report.in, "Attack output directories (searched recursively)")->required();
  c_report->add_option("--out", report.out, "Output directory");

  try {
    args = expand_config(std::move(args));
    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? ok : usage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return usage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return format;
  }

  try {
    if (*c_dataset) cmd_dataset(dataset, out);
    if (*c_train) cmd_train(train_args, out, err);
    if (*c_profile) cmd_profile(profile, out, err);
    if (*c_calib) cmd_calibrate(calib, out);
    if (*c_attack) cmd_attack(attack, out);
    if (*c_eval) cmd_evaluate(eval, out);
    if (*c_detect) cmd_detect(detect_args, out);
    if (*c_diff) cmd_diff(diff, out);
    if (*c_report) cmd_report(report, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return usage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return numerical;
  } catch (const TrainingError& e) {
    err << "numerical error: " << e.what() << "\n";
    return numerical;
  } catch (const CalibrationError& e) {
    err << "numerical error: " << e.what() << "\n";
    return numerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return format;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return format;
  }
  return ok;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace deepbound::cli
