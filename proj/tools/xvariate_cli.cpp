/*
 * Copyright (c) 2026 The xvariate Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Command-line driver: gen-data, train, forecast, eval, gradcheck, inspect.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xvariate/evaluation.hpp"
#include "xvariate/io.hpp"
#include "xvariate/synthetic.hpp"
#include "xvariate/train.hpp"

namespace xv = xvariate;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

xv::Config config_from(const std::string& path) {
  return path.empty() ? xv::Config{} : xv::load_config(path);
}

int gen_data(const std::string& kind, std::size_t entities, std::size_t length,
             std::uint64_t seed, const std::string& out, std::size_t lag_min,
             std::size_t lag_max, double noise, std::size_t max_components) {
  xv::CorpusSpec spec;
  spec.length = length;
  spec.lag_min = lag_min;
  spec.lag_max = lag_max;
  spec.noise_std = noise;
  spec.kernels.max_components = max_components;
  if (kind == "kernel") {
    spec.kernel_entities = entities;
  } else if (kind == "cotemporaneous") {
    spec.cotemporaneous_entities = entities;
  } else if (kind == "leadlag") {
    spec.lead_lag_entities = entities;
  } else if (kind == "cointegrated") {
    spec.cointegrated_entities = entities;
  } else if (kind == "mixed") {
    spec.kernel_entities = entities / 4;
    spec.cotemporaneous_entities = entities / 4;
    spec.lead_lag_entities = entities / 4;
    spec.cointegrated_entities = entities - 3 * (entities / 4);
  } else {
    throw xv::ValidationError("gen-data: unknown kind '" + kind + "'");
  }
  const auto corpus = xv::generate_corpus(spec, seed);
  auto provenance = xv::corpus_spec_json(spec);
  provenance["seed"] = seed;
  provenance["kind"] = kind;
  xv::save_dataset(out, corpus, provenance);
  std::cout << "wrote " << corpus.size() << " entities to " << out << "\n";
  return 0;
}

int train_cmd(const std::string& config_path, const std::string& data, std::uint64_t seed,
              const std::string& out, std::size_t steps, const std::string& log_path) {
  xv::Config cfg = config_from(config_path);
  if (steps > 0) cfg.schedule.total_steps = steps;
  xv::validate(cfg);
  const auto corpus = xv::load_dataset(data);
  xv::Model<double> model(cfg.model, seed);
  std::string trace = "step,loss,prediction,orthogonality,lr,grad_norm,entities,variates\n";
  xv::TrainHooks hooks;
  const auto t0 = std::chrono::steady_clock::now();
  hooks.on_step = [&](const xv::StepRecord& r) {
    trace += std::to_string(r.step) + "," + num(r.loss) + "," + num(r.prediction) + "," +
             num(r.orthogonality) + "," + num(r.lr) + "," + num(r.grad_norm) + "," +
             std::to_string(r.entities) + "," + std::to_string(r.variates) + "\n";
    if (r.step % 100 == 0 || r.step == cfg.schedule.total_steps) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "step %zu loss %.5f lr %.3g (%.1fs)\n", r.step, r.loss, r.lr, secs);
    }
  };
  hooks.on_checkpoint = [&](std::size_t step) {
    if (step == cfg.schedule.total_steps) {
      xv::save_checkpoint(out, cfg, model.params());
    } else {
      xv::save_checkpoint(out + ".step" + std::to_string(step), cfg, model.params());
    }
  };
  const auto result = xv::train(model, corpus, cfg, seed, hooks);
  if (!log_path.empty()) xv::write_file(log_path, trace);
  for (const auto& [reason, count] : result.skipped_windows) {
    std::fprintf(stderr, "skipped %zu windows: %s\n", count, reason.c_str());
  }
  std::cout << "final loss " << num(result.steps.back().loss) << " checkpoint " << out << "\n";
  return 0;
}

int forecast_cmd(const std::string& ckpt, const std::string& data, std::size_t horizon,
                 std::size_t max_context, const std::string& entity, const std::string& out) {
  xv::Config cfg;
  const auto model = xv::load_model<double>(ckpt, &cfg);
  // Zero means the longest context the checkpoint was trained on.
  if (max_context == 0) max_context = cfg.sampler.context_cap;
  const auto corpus = xv::load_dataset(data);
  std::string csv = "entity,variate,step";
  for (double q : model.config().quantiles) csv += ",q" + num(q);
  csv += "\n";
  std::size_t used = 0;
  for (const auto& e : corpus) {
    if (!entity.empty() && e.id != entity) continue;
    ++used;
    xv::SeriesWindow w;
    w.entity_id = e.id;
    for (const auto& row : e.values) {
      const std::size_t keep = std::min(row.size(), max_context);
      w.history.emplace_back(row.end() - static_cast<std::ptrdiff_t>(keep), row.end());
    }
    const auto fc = xv::forecast_windows(model, std::span<const xv::SeriesWindow>(&w, 1), horizon);
    const std::size_t nq = fc.quantiles.size();
    for (std::size_t r = 0; r < fc.entity_ids.size(); ++r) {
      for (std::size_t t = 0; t < horizon; ++t) {
        csv += e.id + "," + std::to_string(fc.variate_index[r]) + "," + std::to_string(t + 1);
        for (std::size_t k = 0; k < nq; ++k) csv += "," + num(fc.values[(r * horizon + t) * nq + k]);
        csv += "\n";
      }
    }
  }
  if (used == 0) throw xv::ValidationError("forecast: no entity matched '" + entity + "'");
  if (out.empty()) {
    std::cout << csv;
  } else {
    xv::write_file(out, csv);
  }
  return 0;
}

int eval_cmd(const std::string& ckpt, const std::string& data, const std::string& mode,
             xv::EvalConfig ecfg, const std::string& out) {
  std::vector<xv::InferenceMode> modes;
  if (mode == "multivariate" || mode == "both") modes.push_back(xv::InferenceMode::kMultivariate);
  if (mode == "independent" || mode == "both") {
    modes.push_back(xv::InferenceMode::kChannelIndependent);
  }
  if (modes.empty()) throw xv::ValidationError("eval: mode must be multivariate|independent|both");
  xv::Config cfg;
  const auto model = xv::load_model<double>(ckpt, &cfg);
  if (ecfg.max_context == 0) ecfg.max_context = cfg.sampler.context_cap;
  const auto corpus = xv::load_dataset(data);
  const auto report = xv::rolling_eval(model, corpus, ecfg, modes,
                                       std::filesystem::path(data).filename().string());
  const std::string csv = xv::results_csv(report, modes);
  if (out.empty()) {
    std::cout << csv;
  } else {
    xv::write_file(out, csv);
  }
  for (const auto& s : report.skipped) std::fprintf(stderr, "skipped %s\n", s.c_str());
  for (auto m : modes) {
    const auto s = xv::summarize(report, m);
    std::fprintf(stderr, "%s: entities %zu mean MASE %.6f mean CRPS %.6f\n",
                 xv::mode_name(m).c_str(), s.entities, s.mean_mase, s.mean_crps);
  }
  return 0;
}

int gradcheck_cmd(const std::string& config_path, std::uint64_t seed, double tol) {
  const xv::Config cfg = config_from(config_path);
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = xv::grad_check_model(cfg, seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& p : report.params) {
    if (p.skipped) {
      std::printf("%-28s %6zu  frozen\n", p.name.c_str(), p.count);
    } else {
      std::printf("%-28s %6zu  max_rel_err %.3e\n", p.name.c_str(), p.count, p.max_rel_error);
    }
  }
  std::printf("max_rel_err %.3e tol %.1e time %.2fs %s\n", report.max_rel_error, tol, secs,
              report.passed(tol) ? "PASS" : "FAIL");
  return report.passed(tol) ? 0 : 2;
}

int inspect_cmd(const std::string& ckpt) {
  const auto c = xv::read_checkpoint(ckpt);
  std::size_t scalars = 0;
  std::printf("version %u\n", c.version);
  std::printf("config:\n%s", c.config_text.c_str());
  std::printf("tensors %zu\n", c.tensors.size());
  for (const auto& t : c.tensors) {
    scalars += t.values.size();
    std::printf("  %-28s %-12s %s offset %zu\n", t.name.c_str(), xv::shape_str(t.shape).c_str(),
                t.dtype == xv::DType::kF32 ? "f32" : "f64", t.offset);
  }
  std::printf("parameters %zu\n", scalars);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xvariate: multivariate probabilistic forecasting"};
  app.require_subcommand(1);

  std::string kind = "leadlag";
  std::string out;
  std::string data;
  std::string config_path;
  std::string ckpt;
  std::string log_path;
  std::string entity;
  std::string mode = "both";
  std::size_t entities = 10;
  std::size_t length = 256;
  std::size_t lag_min = 1;
  std::size_t lag_max = 8;
  std::size_t max_components = 5;
  std::size_t steps = 0;
  std::size_t horizon = 16;
  double noise = 0.02;
  double tol = 1e-4;
  std::uint64_t seed = 0;
  std::size_t max_context = 0;
  xv::EvalConfig ecfg;
  ecfg.max_context = 0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  gen->add_option("--kind", kind, "kernel|cotemporaneous|leadlag|cointegrated|mixed");
  gen->add_option("--entities", entities, "number of entities");
  gen->add_option("--length", length, "series length");
  gen->add_option("--seed", seed, "corpus seed");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--lag-min", lag_min, "smallest lead-lag shift");
  gen->add_option("--lag-max", lag_max, "largest lead-lag shift");
  gen->add_option("--noise", noise, "noise standard deviation");
  gen->add_option("--max-components", max_components, "kernels per composition");

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", config_path, "config file");
  tr->add_option("--data", data, "dataset directory")->required();
  tr->add_option("--seed", seed, "initialization and sampling seed");
  tr->add_option("--out", out, "checkpoint path")->required();
  tr->add_option("--steps", steps, "override total_steps");
  tr->add_option("--log", log_path, "loss trace CSV");

  auto* fc = app.add_subcommand("forecast", "forecast the end of every series");
  fc->add_option("--ckpt", ckpt, "checkpoint")->required();
  fc->add_option("--data", data, "dataset directory")->required();
  fc->add_option("--horizon", horizon, "forecast steps");
  fc->add_option("--max-context", max_context,
                 "history steps used (default: the trained context cap)");
  fc->add_option("--entity", entity, "only this entity id");
  fc->add_option("--out", out, "output CSV (stdout if omitted)");

  auto* ev = app.add_subcommand("eval", "rolling-window evaluation");
  ev->add_option("--ckpt", ckpt, "checkpoint")->required();
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--mode", mode, "multivariate|independent|both");
  ev->add_option("--horizon", ecfg.horizon, "prediction length H");
  ev->add_option("--windows", ecfg.windows, "window count W");
  ev->add_option("--seasonality", ecfg.seasonality, "seasonal period m");
  ev->add_option("--max-context", ecfg.max_context,
                 "history steps per forecast (default: the trained context cap)");
  ev->add_option("--out", out, "results CSV (stdout if omitted)");

  auto* gc = app.add_subcommand("gradcheck", "whole-model gradient check");
  gc->add_option("--config", config_path, "config file");
  gc->add_option("--seed", seed, "initialization seed");
  gc->add_option("--tol", tol, "relative error tolerance");

  auto* in = app.add_subcommand("inspect", "summarize a checkpoint");
  in->add_option("--ckpt", ckpt, "checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return gen_data(kind, entities, length, seed, out, lag_min, lag_max, noise,
                              max_components);
    if (*tr) return train_cmd(config_path, data, seed, out, steps, log_path);
    if (*fc) return forecast_cmd(ckpt, data, horizon, max_context, entity, out);
    if (*ev) return eval_cmd(ckpt, data, mode, ecfg, out);
    if (*gc) return gradcheck_cmd(config_path, seed, tol);
    if (*in) return inspect_cmd(ckpt);
  } catch (const xv::ValidationError& e) {
    std::cerr << "error: validation: " << e.what() << "\n";
    return 1;
  } catch (const xv::NumericError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
