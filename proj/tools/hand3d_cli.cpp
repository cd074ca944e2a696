// hand3d: dataset generation, training, evaluation and gradient checks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hand3d/checkpoint.hpp"
#include "hand3d/dataset.hpp"
#include "hand3d/evaluation.hpp"
#include "hand3d/gradcheck_suite.hpp"
#include "hand3d/training.hpp"

namespace fs = std::filesystem;
using namespace hand3d;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::UnsupportedVersion:
    case ErrorCode::SchemaViolation:
    case ErrorCode::ArchMismatch:
    case ErrorCode::LabelOutOfRange:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::EmptyMask:
    case ErrorCode::DegenerateSpan:
      return kExitValidation;
    default:
      return kExitRuntime;
  }
}

struct GenArgs {
  std::string out, model;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::size_t gestures = 0;
};

int gen_data(const GenArgs& a) {
  HandModel model;
  if (!a.model.empty()) model = model_from_json(nlohmann::json::parse(read_file(a.model)));
  if (a.n == 0) throw Error(ErrorCode::InvalidConfig, "--n must be at least 1");
  if (a.gestures) {
    GestureOptions g;
    g.num_classes = a.gestures;
    write_dataset(a.out, generate_gesture_samples(model, a.n, a.seed, g));
  } else {
    generate_dataset(model, a.n, a.seed, a.out);
  }
  std::printf("wrote %zu records to %s\n", a.n, a.out.c_str());
  return 0;
}

/// "preset:NAME" or a JSON file, layered over base.
training::TrainConfig load_config(const std::string& source, training::TrainConfig base = {}) {
  if (source.rfind("preset:", 0) == 0) return training::preset(source.substr(7));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(source));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, source + " is not JSON: " + e.what());
  }
  return training::config_from_json(j, std::move(base));
}

struct TrainArgs {
  std::string arch, data, out, config, resume, log;
  std::optional<std::uint64_t> seed, iterations, checkpoint_every;
  bool print_schedule = false;
};

int print_schedule(const training::TrainConfig& c) {
  std::printf("iteration,lr\n");
  for (const auto& [start, rate] : c.schedule.steps)
    if (start < c.iterations || start == 0) std::printf("%llu,%.9g\n", static_cast<unsigned long long>(start), rate);
  std::printf("# %llu iterations, batch %zu\n", static_cast<unsigned long long>(c.iterations), c.batch_size);
  return 0;
}

int train(const TrainArgs& a) {
  std::optional<checkpoint::Checkpoint> resumed;
  if (!a.resume.empty()) {
    resumed = checkpoint::load(a.resume);
    if (resumed->oracle()) throw Error(ErrorCode::ArchMismatch, "cannot resume from an oracle checkpoint");
  }
  training::TrainConfig c;
  if (!a.config.empty()) c = load_config(a.config);
  else if (resumed) c = resumed->config;
  if (!a.arch.empty()) c.arch = models::parse_arch(a.arch);
  if (a.iterations) c.iterations = *a.iterations;
  if (a.checkpoint_every) c.checkpoint_every = *a.checkpoint_every;
  if (a.seed) c.seed = *a.seed;
  c.validate();
  if (a.print_schedule) return print_schedule(c);

  if (!a.seed && !resumed) throw Error(ErrorCode::InvalidConfig, "--seed is required");
  if (a.data.empty() || a.out.empty()) throw Error(ErrorCode::InvalidConfig, "--data and --out are required");
  c.train_data = a.data;
  const std::vector<SampleRecord> records = read_dataset(a.data);
  if (records.empty()) throw Error(ErrorCode::InvalidConfig, a.data + " holds no records");

  models::ModelBundle m =
      resumed ? std::move(*resumed->model) : models::make_model(c.arch, c.width_scale, c.seed, {}, c.classes);
  if (m.arch != c.arch)
    throw Error(ErrorCode::ArchMismatch,
                "checkpoint holds " + models::to_string(m.arch) + ", training " + models::to_string(c.arch));

  const std::string log_path = a.log.empty() ? a.out + ".log.csv" : a.log;
  const bool fresh_log = !resumed || !fs::exists(log_path) || fs::file_size(log_path) == 0;
  std::ofstream log(log_path, fresh_log ? std::ios::trunc : std::ios::app);
  if (!log) throw Error(ErrorCode::IoError, "cannot open log " + log_path);
  if (fresh_log) log << training::log_header();

  training::TrainCallbacks cb;
  cb.on_log = [&](const training::LogRow& r) {
    log << training::format_log_row(r) << std::flush;
    std::printf("%s", training::format_log_row(r).c_str());
  };
  cb.on_checkpoint = [&](const models::ModelBundle& b) { checkpoint::save(a.out, b, c); };
  try {
    training::train(m, c, records, cb);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NumericDivergence) {
      const std::string dump = a.out + ".diverged.json";
      checkpoint::save(dump, m, c);
      std::fprintf(stderr, "diverged: %s\nstate before the failing update saved to %s\n", e.what(), dump.c_str());
    }
    throw;
  }
  checkpoint::save(a.out, m, c);
  std::printf("wrote %s at iteration %llu\n", a.out.c_str(), static_cast<unsigned long long>(m.iteration));
  return 0;
}

struct EvalArgs {
  std::string ckpt, ckpt_b, data, out;
};

struct Slot {
  std::string file_tag;
  checkpoint::Checkpoint ckpt;
  std::string name() const {
    return ckpt.oracle() ? std::string(checkpoint::kOracleArch) : models::to_string(ckpt.model->arch);
  }
  bool gesture() const { return !ckpt.oracle() && ckpt.model->arch == models::Arch::GestureNet; }
};

int eval(const EvalArgs& a) {
  std::vector<Slot> slots{{"a", checkpoint::load(a.ckpt)}};
  if (!a.ckpt_b.empty()) slots.push_back({"b", checkpoint::load(a.ckpt_b)});
  if (slots.size() == 2 && slots[0].gesture() != slots[1].gesture())
    throw Error(ErrorCode::ArchMismatch, "cannot compare a gesture classifier with a pose prior");
  const std::vector<SampleRecord> records = read_dataset(a.data);
  if (records.empty()) throw Error(ErrorCode::InvalidConfig, a.data + " holds no records");
  fs::create_directories(a.out);

  if (slots[0].gesture()) {
    std::string csv = "model,samples,accuracy\n";
    for (Slot& s : slots) {
      for (const SampleRecord& r : records)
        if (!r.label) throw Error(ErrorCode::ArchMismatch, "gesture checkpoints need labelled data");
      const std::vector<int> pred = training::predict_labels(*s.ckpt.model, records);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < records.size(); ++i) hits += pred[i] == *records[i].label;
      char buf[128];
      std::snprintf(buf, sizeof buf, "%s,%zu,%.9g\n", s.name().c_str(), records.size(),
                    double(hits) / double(records.size()));
      csv += buf;
    }
    atomic_write(fs::path(a.out) / "accuracy.csv", csv);
    std::printf("%s", csv.c_str());
    return 0;
  }

  std::vector<evaluation::ModelMetrics> rows;
  for (Slot& s : slots) {
    const std::vector<RelativePose> pred =
        s.ckpt.oracle() ? evaluation::oracle_predictions(records) : training::predict_relative(*s.ckpt.model, records);
    rows.push_back(evaluation::evaluate_relative(s.name(), pred, records));
    atomic_write(fs::path(a.out) / ("pck_" + s.file_tag + ".csv"), evaluation::pck_csv(rows.back().pck));
  }
  const std::string csv = evaluation::metrics_csv(rows);
  atomic_write(fs::path(a.out) / "metrics.csv", csv);
  std::printf("%s", csv.c_str());
  return 0;
}

struct GradArgs {
  std::string arch = "poseprior";
  std::uint64_t seed = 0;
  double fault = 0.0;
};

int run_gradcheck(const GradArgs& a) {
  gradcheck::SuiteOptions o;
  o.arch = models::parse_arch(a.arch);
  o.seed = a.seed;
  o.corrupt = a.fault;
  const auto results = gradcheck::run_suite(o);
  std::printf("%s", gradcheck::format_report(results).c_str());
  const bool ok = gradcheck::all_pass(results);
  std::printf("%s (tolerance %.0e)\n", ok ? "all components pass" : "gradient check FAILED", gradcheck::kTolerance);
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D hand pose lifting: data, training, evaluation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a procedural dataset (one JSON record per line)");
  g->add_option("--out", gen.out, "Output dataset path")->required();
  g->add_option("--n", gen.n, "Number of records")->required();
  g->add_option("--seed", gen.seed, "Generator seed")->required();
  g->add_option("--model", gen.model, "Hand model JSON (default: built-in model)");
  g->add_option("--gestures", gen.gestures, "Emit labelled gesture poses with this many classes");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model and write a checkpoint");
  t->add_option("--arch", tr.arch, "poseprior | poseprior-direct | gesturenet");
  t->add_option("--data", tr.data, "Training dataset");
  t->add_option("--out", tr.out, "Checkpoint manifest path");
  t->add_option("--config", tr.config, "Config JSON or preset:NAME");
  t->add_option("--seed", tr.seed, "Training seed (required unless resuming)");
  t->add_option("--iterations", tr.iterations, "Override the configured iteration count");
  t->add_option("--checkpoint-every", tr.checkpoint_every, "Rewrite the checkpoint every K iterations");
  t->add_option("--resume", tr.resume, "Continue from this checkpoint");
  t->add_option("--log", tr.log, "Metrics log (default: OUT.log.csv)");
  t->add_flag("--print-schedule", tr.print_schedule, "Print the learning-rate breakpoints and exit");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate one checkpoint or compare two");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  e->add_option("--ckpt-b", ev.ckpt_b, "Second checkpoint for a side-by-side comparison");
  e->add_option("--data", ev.data, "Evaluation dataset")->required();
  e->add_option("--out", ev.out, "Output directory")->required();

  std::string oracle_out;
  auto* o = app.add_subcommand("make-oracle", "Write a checkpoint that predicts ground truth");
  o->add_option("--out", oracle_out, "Checkpoint manifest path")->required();

  GradArgs gc;
  auto* gcmd = app.add_subcommand("gradcheck", "Finite-difference check of every layer kind and loss");
  gcmd->add_option("--arch", gc.arch, "Full model checked last");
  gcmd->add_option("--seed", gc.seed, "Seed for weights, inputs and sampled entries");
  gcmd->add_option("--inject-fault", gc.fault)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*g) return gen_data(gen);
    if (*t) return train(tr);
    if (*e) return eval(ev);
    if (*o) {
      checkpoint::save_oracle(oracle_out);
      return 0;
    }
    if (*gcmd) return run_gradcheck(gc);
  } catch (const Error& err) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(err.code())).c_str(), err.what());
    return exit_code(err.code());
  } catch (const nlohmann::json::exception& err) {
    std::fprintf(stderr, "error [InvalidConfig]: %s\n", err.what());
    return kExitValidation;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitRuntime;
  }
  return kExitValidation;
}
