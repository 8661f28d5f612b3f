#include "streamgate/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "streamgate/checkpoint.hpp"
#include "streamgate/config.hpp"
#include "streamgate/errors.hpp"
#include "streamgate/eval_suite.hpp"
#include "streamgate/stream_io.hpp"
#include "streamgate/trace_io.hpp"
#include "streamgate/trainer.hpp"
#include "streamgate/trigger_engine.hpp"

namespace streamgate {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Overrides {
  std::optional<int> steps, batch_size, window, budget, cooldown;
  std::optional<double> lr, w_pos, threshold, lambda, qa_mix;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
};

void add_train_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--steps", o.steps, "Optimizer steps");
  cmd->add_option("--batch-size", o.batch_size, "Samples per step");
  cmd->add_option("--lr", o.lr, "Learning rate");
  cmd->add_option("--w-pos", o.w_pos, "Positive-class weight (default: config, else N_neg/N_pos)");
  cmd->add_option("--lambda", o.lambda, "LM loss weight in stage 2");
  cmd->add_option("--qa-mix", o.qa_mix, "Fraction of QA samples per stage-2 batch");
  cmd->add_option("--seed", o.seed, "Run seed");
}

void add_policy_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--window", o.window, "Smoothing window (units)");
  cmd->add_option("--threshold", o.threshold, "Trigger threshold");
  cmd->add_option("--budget", o.budget, "Token budget per unit");
  cmd->add_option("--cooldown", o.cooldown, "Units between recurring triggers");
  cmd->add_option("--mode", o.mode, "alert_once | alert_recurring | narration | static_scoring");
}

void apply(const Overrides& o, TrainConfig& t) {
  if (o.steps) t.steps = *o.steps;
  if (o.batch_size) t.batch_size = *o.batch_size;
  if (o.lr) t.learning_rate = *o.lr;
  if (o.w_pos) t.w_pos = *o.w_pos;
  if (o.lambda) t.lambda = *o.lambda;
  if (o.qa_mix) t.qa_mix_ratio = *o.qa_mix;
  if (o.seed) t.seed = *o.seed;
}

void apply(const Overrides& o, TriggerPolicy& p) {
  if (o.window) p.window = *o.window;
  if (o.threshold) p.threshold = *o.threshold;
  if (o.budget) p.token_budget = *o.budget;
  if (o.cooldown) p.cooldown_units = *o.cooldown;
  if (o.mode) p.mode = parse_trigger_mode(*o.mode);
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return run_config_from_json(read_json_file(path));
}

std::vector<StreamSample> load_inputs(const fs::path& p) {
  if (fs::is_directory(p)) return load_stream_dir(p);
  return {load_stream(p)};
}

void split_by_task(std::vector<StreamSample> all, std::vector<StreamSample>& proactive, std::vector<StreamSample>& qa) {
  for (StreamSample& s : all) (s.task == TaskKind::reactive_qa ? qa : proactive).push_back(std::move(s));
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

json metrics_json(const StepMetrics& m) {
  json j = {{"stage", m.stage}, {"step", m.step}, {"l_total", m.l_total}, {"grad_norm", m.grad_norm}};
  j["l_time"] = m.l_time ? json(*m.l_time) : json(nullptr);
  j["l_lm"] = m.l_lm ? json(*m.l_lm) : json(nullptr);
  return j;
}

TriggerPolicy default_policy(TaskKind task) {
  TriggerPolicy p;
  if (task == TaskKind::narration) p.mode = TriggerMode::narration;
  return p;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Streaming speak-timing model: data generation, training, inference and evaluation", "streamgate"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // gen
  std::string task_name = "alert";
  int count = 10, duration = 30, events = 1, segments = 4;
  std::uint64_t seed = 0;
  std::string config_path, out_dir = "data";
  auto* gen = app.add_subcommand("gen", "Generate synthetic labeled streams");
  gen->add_option("--task", task_name, "alert | narration | qa")->required();
  gen->add_option("--n", count, "Number of samples")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", seed, "Base seed");
  gen->add_option("--duration", duration, "Seconds per stream");
  gen->add_option("--events", events, "Alert events per stream");
  gen->add_option("--segments", segments, "Narration segments per stream");
  gen->add_option("--config", config_path, "Run config (dims section)");
  gen->add_option("--out", out_dir, "Output directory");

  // train
  int stage = 1;
  std::string data_dir, qa_dir, ckpt_out, init_ckpt, metrics_path;
  Overrides ov;
  auto* train = app.add_subcommand("train", "Run one curriculum stage");
  train->add_option("--stage", stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  train->add_option("--config", config_path, "Run config");
  train->add_option("--data", data_dir, "Training streams (stage 1: QA; stage 2: proactive, QA mixed in)")->required();
  train->add_option("--qa-data", qa_dir, "Additional QA streams for the stage-2 mix");
  train->add_option("--init", init_ckpt, "Checkpoint to start from (required for stage 2)");
  train->add_option("--out", ckpt_out, "Output checkpoint")->required();
  train->add_option("--metrics", metrics_path, "Metrics log (default: <out>.metrics.jsonl)");
  add_train_overrides(train, ov);

  // infer
  std::string ckpt_path, stream_path, policy_path, trace_out;
  bool pipelined = false;
  auto* infer = app.add_subcommand("infer", "Run the trigger engine over streams");
  infer->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  infer->add_option("--stream", stream_path, "Stream file or directory")->required();
  infer->add_option("--policy", policy_path, "Policy JSON (object or run config with a policy section)");
  infer->add_option("--trace-out", trace_out, "Trace file (single stream) or directory")->required();
  infer->add_flag("--pipelined", pipelined, "Prefetch the next unit while encoding");
  add_policy_overrides(infer, ov);

  // eval
  std::string traces_dir, ann_dir, report_path, table_path;
  auto* eval = app.add_subcommand("eval", "Score traces against annotations");
  eval->add_option("--task", task_name, "alert | narration | qa")->required();
  eval->add_option("--traces", traces_dir, "Directory of .trace files")->required();
  eval->add_option("--annotations", ann_dir, "Directory of stream files")->required();
  eval->add_option("--report", report_path, "Report output")->required();
  eval->add_option("--table", table_path, "Flat metric table output (CSV)");

  // export-trace
  std::string trace_in, csv_out;
  auto* exp = app.add_subcommand("export-trace", "Export a trace as t,p_t,s_t,trigger rows");
  exp->add_option("--trace", trace_in, "Trace file")->required();
  exp->add_option("--out", csv_out, "CSV output (default: stdout)");

  // sweep
  std::string eval_dir, sweep_out, wpos_list = "1,3,9", seed_list = "1,2,3";
  int s1_steps = -1;
  auto* sweep = app.add_subcommand("sweep", "Positive-weight sensitivity sweep");
  sweep->add_option("--config", config_path, "Run config (model + stage-2 train settings)");
  sweep->add_option("--data", data_dir, "Proactive training streams")->required();
  sweep->add_option("--qa-data", qa_dir, "QA streams for stage 1 and the stage-2 mix")->required();
  sweep->add_option("--eval", eval_dir, "Evaluation streams")->required();
  sweep->add_option("--out", sweep_out, "Result table (CSV)")->required();
  sweep->add_option("--w-pos", wpos_list, "Comma-separated w_pos values");
  sweep->add_option("--seeds", seed_list, "Comma-separated seeds");
  sweep->add_option("--stage1-steps", s1_steps, "Stage-1 steps (default: train.steps)");
  sweep->add_option("--threshold", ov.threshold, "Positive-prediction threshold");

  // positions
  std::string pos_out;
  auto* positions = app.add_subcommand("positions", "Export the 3D position ids of a stream's layout");
  positions->add_option("--stream", stream_path, "Stream file")->required();
  positions->add_option("--out", pos_out, "CSV output (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen) {
      RunConfig rc = load_config(config_path);
      rc.validate();
      DatasetSpec spec{parse_task(task_name), count, duration, events, segments, rc.dims, seed};
      const auto samples = generate_dataset(spec);
      fs::create_directories(out_dir);
      for (const StreamSample& s : samples) save_stream(fs::path(out_dir) / (s.sample_id + ".jsonl"), s);
      out << "wrote " << samples.size() << " streams to " << out_dir << "\n";
      return 0;
    }

    if (*train) {
      RunConfig rc = load_config(config_path);
      rc.train.stage = stage;
      apply(ov, rc.train);
      rc.train.checkpoint_path = ckpt_out;
      Checkpoint ckpt;
      if (!init_ckpt.empty()) {
        ckpt = load_checkpoint(init_ckpt);
        rc.model = ckpt.params.config;
      } else if (stage == 2) {
        throw ConfigError("stage 2 needs --init with a stage-1 checkpoint");
      }
      rc.dims.d_video = rc.model.d_video;
      rc.dims.d_audio = rc.model.d_audio;
      rc.validate();
      if (init_ckpt.empty()) ckpt = initial_checkpoint(rc.model, rc.train.seed);

      std::vector<StreamSample> proactive, qa;
      split_by_task(load_inputs(data_dir), proactive, qa);
      if (!qa_dir.empty()) split_by_task(load_inputs(qa_dir), proactive, qa);

      std::ofstream metrics = open_out(metrics_path.empty() ? ckpt_out + ".metrics.jsonl" : metrics_path);
      const MetricsSink sink = [&](const StepMetrics& m) { metrics << metrics_json(m).dump() << '\n'; };
      TrainResult r;
      if (stage == 1) {
        if (qa.empty()) throw DataError("stage 1 found no QA streams under " + data_dir);
        r = train_stage1(ckpt, qa, rc.train, sink);
      } else {
        r = train_stage2(ckpt, proactive, qa, rc.train, sink);
      }
      const StepMetrics& last = r.history.back();
      out << "stage " << stage << " done: " << r.history.size() << " steps, final loss " << last.l_total;
      if (stage == 2) out << ", w_pos " << r.w_pos;
      out << "\ncheckpoint " << ckpt_out << "\n";
      return 0;
    }

    if (*infer) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      if (ckpt.stage_complete < 2) err << "warning: checkpoint has not completed stage 2\n";
      std::optional<TriggerPolicy> file_policy;
      if (!policy_path.empty()) {
        json j = read_json_file(policy_path);
        file_policy = policy_from_json(j.contains("policy") ? j["policy"] : j);
      }
      const auto samples = load_inputs(stream_path);
      const bool to_dir = fs::is_directory(stream_path);
      if (to_dir) fs::create_directories(trace_out);
      std::size_t triggers = 0;
      for (const StreamSample& s : samples) {
        TriggerPolicy p = file_policy.value_or(default_policy(s.task));
        apply(ov, p);
        const SpeakTrace trace = run_stream(ckpt.params, s, p, EngineOptions{pipelined});
        triggers += trace.trigger_times().size();
        save_trace(to_dir ? fs::path(trace_out) / (s.sample_id + ".trace") : fs::path(trace_out), trace);
      }
      out << "traced " << samples.size() << " streams, " << triggers << " triggers\n";
      return 0;
    }

    if (*eval) {
      const TaskKind task = parse_task(task_name);
      std::vector<SpeakTrace> traces;
      for (const fs::path& p : list_trace_files(traces_dir)) traces.push_back(load_trace(p));
      const auto annotations = load_stream_dir(ann_dir);
      const EvalReport rep = evaluate(task, traces, annotations);
      open_out(report_path) << format_report(rep);
      if (!table_path.empty()) open_out(table_path) << format_table(rep);
      for (const auto& [k, v] : rep.metrics) out << k << ": " << v << "\n";
      return 0;
    }

    if (*exp) {
      const SpeakTrace trace = load_trace(trace_in);
      if (csv_out.empty()) {
        write_trace_csv(out, trace);
      } else {
        std::ofstream f = open_out(csv_out);
        write_trace_csv(f, trace);
      }
      return 0;
    }

    if (*sweep) {
      RunConfig rc = load_config(config_path);
      apply(ov, rc.train);
      rc.validate();
      SweepSpec spec;
      spec.model = rc.model;
      spec.stage1 = rc.train;
      if (s1_steps > 0) spec.stage1.steps = s1_steps;
      spec.stage2 = rc.train;
      if (ov.threshold) spec.threshold = *ov.threshold;
      spec.w_pos_values.clear();
      spec.seeds.clear();
      try {
        for (const std::string& v : split_csv(wpos_list)) spec.w_pos_values.push_back(std::stod(v));
        for (const std::string& v : split_csv(seed_list)) spec.seeds.push_back(std::stoull(v));
      } catch (const std::logic_error&) {
        throw ConfigError("--w-pos and --seeds take comma-separated numbers");
      }
      std::vector<StreamSample> proactive, qa, unused;
      split_by_task(load_inputs(data_dir), proactive, unused);
      split_by_task(load_inputs(qa_dir), unused, qa);
      const auto eval_set = load_inputs(eval_dir);
      const auto rows = run_wpos_sweep(spec, proactive, qa, eval_set);
      std::ofstream f = open_out(sweep_out);
      f << "w_pos,mean_rate";
      for (std::uint64_t s : spec.seeds) f << ",seed_" << s;
      f << "\n";
      for (const SweepRow& r : rows) {
        f << r.w_pos << ',' << r.mean_rate;
        for (double v : r.per_seed_rate) f << ',' << v;
        f << "\n";
        out << "w_pos " << r.w_pos << ": positive rate " << r.mean_rate << "\n";
      }
      return 0;
    }

    if (*positions) {
      const StreamSample s = load_stream(stream_path);
      PositionCursor cursor;
      const PackedSequence seq = pack_sequence(build_stream_sequence(s), cursor, false);
      std::ostringstream os;
      os << "row,modality,id,t,h,w\n";
      static constexpr const char* kModality[] = {"marker", "video", "audio", "text", "query"};
      for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        const Token& tok = seq.tokens[i];
        const PositionTriple& p = seq.positions[i];
        os << i << ',' << kModality[static_cast<int>(tok.modality)] << ',' << tok.id << ',' << p.t << ',' << p.h
           << ',' << p.w << '\n';
      }
      if (pos_out.empty())
        out << os.str();
      else
        open_out(pos_out) << os.str();
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace streamgate
