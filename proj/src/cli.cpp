#include "oct4d/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "oct4d/binio.hpp"
#include "oct4d/plot.hpp"
#include "oct4d/reps.hpp"

namespace fs = std::filesystem;

namespace oct4d {

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
}

std::string cell_id(int p, int f) { return "p" + std::to_string(p) + "_f" + std::to_string(f); }

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

// ---- shared helpers ---------------------------------------------------------------

void append_csv(const fs::path& path, const std::string& header, const std::vector<std::string>& rows) {
  std::string text;
  if (fs::exists(path)) {
    text = binio::read_file(path);
    const std::string first = text.substr(0, text.find('\n'));
    if (first != header) {
      throw std::runtime_error(path.string() + " has a different header; refusing to mix row formats");
    }
    if (!text.empty() && text.back() != '\n') text += '\n';
  } else {
    text = header + "\n";
  }
  for (const auto& r : rows) text += r + "\n";
  binio::write_file_atomic(path, text);
}

void write_errors(const fs::path& path, const std::vector<double>& errors) {
  std::string text;
  for (double e : errors) text += binio::format_double(e) + "\n";
  binio::write_file_atomic(path, text);
}

std::vector<double> read_errors(const fs::path& path) {
  const std::string text = binio::read_file(path);
  std::vector<double> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double v = 0.0;
    const auto res = std::from_chars(line.data(), line.data() + line.size(), v);
    if (res.ec != std::errc() || res.ptr != line.data() + line.size()) {
      throw std::runtime_error("malformed value '" + line + "' in " + path.string());
    }
    out.push_back(v);
  }
  return out;
}

std::string arch_name(const ModelConfig& cfg) {
  for (const auto& p : arch_presets()) {
    if (p.family != cfg.family || p.rnn != cfg.rnn) continue;
    if (std::find(p.representations.begin(), p.representations.end(), cfg.representation) != p.representations.end()) {
      return p.name;
    }
  }
  return to_string(cfg.family) + "-" + to_string(cfg.rnn);
}

// ---- gen ------------------------------------------------------------------------------

GenSummary cmd_gen(const GenOptions& opt, std::ostream& log) {
  opt.sim.validate();
  ensure_dir(opt.out);
  GenSummary s;
  s.dataset = opt.out / kDatasetFile;
  s.experiments = opt.sim.experiments;
  DatasetWriter writer(s.dataset, opt.sim);
  std::vector<ExperimentMeta> metas;
  for (int i = 0; i < opt.sim.experiments; ++i) {
    const Experiment e = generate_experiment(opt.sim, static_cast<std::uint32_t>(i));
    writer.write(e);
    s.samples += e.size();
    ++s.splits[static_cast<std::size_t>(e.meta.split)];
    metas.push_back(e.meta);
  }
  writer.close();
  write_sidecar(opt.sim, metas, s.samples, s.dataset.string() + ".txt");
  log << "wrote " << s.dataset.string() << ": " << s.experiments << " experiments, " << s.samples
      << " samples, splits train/val/test = " << s.splits[0] << "/" << s.splits[1] << "/" << s.splits[2] << "\n";
  return s;
}

// ---- train ----------------------------------------------------------------------------

ModelConfig resolve_model(const TrainOptions& opt, const RenderConfig& render) {
  ModelConfig m = opt.model;
  m.height = render.height;
  m.width = render.width;
  m = apply_arch(opt.arch, m);
  if (!is_temporal(m.representation)) m.history = 1;
  m.validate();
  opt.train.validate();
  return m;
}

TrainSummary train_on(const TrainOptions& opt, const WindowedData& data, std::ostream& log) {
  ensure_dir(opt.out);
  TrainSummary s;
  s.checkpoint = opt.out / kCheckpointFile;
  s.loss_csv = opt.out / kLossFile;
  TrainConfig tc = opt.train;
  if (tc.checkpoint_every > 0) tc.checkpoint_path = s.checkpoint;
  TrainState<float> state(opt.model, tc);
  train(state, data, tc, [&](const EpochLoss& e) {
    log << "epoch " << e.epoch << " train_mse " << fmt_double(e.train_mse) << " val_mse " << fmt_double(e.val_mse)
        << "\n";
  });
  save_checkpoint(make_checkpoint(state.net, &state.ema, state.scale), s.checkpoint);
  write_loss_csv(state.history, s.loss_csv);
  s.history = state.history;
  return s;
}

TrainSummary cmd_train(const TrainOptions& opt, std::ostream& log) {
  if (!fs::exists(opt.dataset)) throw std::runtime_error("dataset not found: " + opt.dataset.string());
  TrainOptions o = opt;
  {
    DatasetReader header(opt.dataset);
    o.model = resolve_model(opt, header.config().render);
  }
  const WindowedData data = load_windows(opt.dataset, o.model);
  log << arch_name(o.model) << " on " << to_string(o.model.representation) << ", p=" << o.model.history
      << " f=" << o.model.horizon << ": " << data.windows(Split::train).size() << " train / "
      << data.windows(Split::val).size() << " val windows\n";
  return train_on(o, data, log);
}

// ---- eval -----------------------------------------------------------------------------

MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const WindowedData& data, std::vector<double>* pred,
                                  std::vector<double>* target) {
  const auto& refs = data.windows(Split::test);
  if (refs.size() < 2) throw std::runtime_error("test split has fewer than 2 windows");
  Network<float> net(ckpt.config, 0, 0.01);
  apply_checkpoint(ckpt, net, true);
  std::vector<double> p = predict(net, data, refs, ckpt.scale);
  const Tensor<double> y = data.labels(refs);
  std::vector<double> t(y.data().begin(), y.data().end());
  MetricsReport r = compute_report(p, t);
  r.arch = arch_name(ckpt.config);
  r.representation = to_string(ckpt.config.representation);
  r.p = ckpt.config.history;
  r.f = ckpt.config.horizon;
  if (pred) *pred = std::move(p);
  if (target) *target = std::move(t);
  return r;
}

MetricsReport cmd_eval(const EvalOptions& opt, std::ostream& log) {
  if (!fs::exists(opt.checkpoint)) throw std::runtime_error("checkpoint not found: " + opt.checkpoint.string());
  if (!fs::exists(opt.dataset)) throw std::runtime_error("dataset not found: " + opt.dataset.string());
  if (opt.run_id.empty() || opt.run_id.find_first_of(",\n/") != std::string::npos) {
    throw std::invalid_argument("run id must be non-empty without ',', '/' or newlines");
  }
  const Checkpoint ckpt = load_checkpoint(opt.checkpoint);
  {
    DatasetReader header(opt.dataset);
    const auto& r = header.config().render;
    if (r.height != ckpt.config.height || r.width != ckpt.config.width) {
      throw std::runtime_error("dataset frame size does not match the checkpoint");
    }
  }
  std::optional<std::vector<double>> other;
  if (opt.compare) other = read_errors(*opt.compare);

  const WindowedData data = load_windows(opt.dataset, ckpt.config);
  std::vector<double> pred, target;
  MetricsReport r = evaluate_checkpoint(ckpt, data, &pred, &target);
  r.run_id = opt.run_id;
  const std::vector<double> errors = abs_errors(pred, target);
  if (other) {
    if (other->size() != errors.size()) {
      throw std::runtime_error("compared run has " + std::to_string(other->size()) + " errors, this run " +
                               std::to_string(errors.size()));
    }
    r.wilcoxon_p = wilcoxon_signed_rank(errors, *other).p_value;
  }

  ensure_dir(opt.out);
  write_errors(opt.out / (opt.run_id + ".errors"), errors);
  const bool w = r.wilcoxon_p.has_value();
  append_csv(opt.out / (w ? kComparisonFile : kMetricsFile), report_csv_header(w), {report_csv_row(r, w)});
  if (opt.plot) {
    binio::write_file_atomic(opt.out / (opt.run_id + ".svg"),
                             regression_svg(pred, target, r.arch + " (" + r.representation + "), test split"));
  }
  log << r.run_id << ": mae " << fmt_double(r.mae) << " mN [" << fmt_double(r.p25) << ", " << fmt_double(r.p75)
      << "], rmae " << fmt_double(r.rmae) << ", pcc " << fmt_double(r.pcc) << ", r2 " << fmt_double(r.r2) << ", n "
      << r.n;
  if (w) log << ", wilcoxon p " << fmt_double(*r.wilcoxon_p);
  log << "\n";
  return r;
}

// ---- sweep ----------------------------------------------------------------------------

std::vector<MetricsReport> cmd_sweep(const SweepOptions& opt, std::ostream& log) {
  if (opt.histories.empty() || opt.horizons.empty()) throw std::invalid_argument("sweep grid is empty");
  if (opt.jobs < 1) throw std::invalid_argument("jobs must be >= 1");
  if (!is_temporal(opt.base.model.representation)) {
    throw std::invalid_argument("sweep varies the history and needs a temporal representation");
  }
  if (!fs::exists(opt.base.dataset)) throw std::runtime_error("dataset not found: " + opt.base.dataset.string());

  struct Cell {
    int p, f;
    TrainOptions train;
  };
  std::vector<Cell> cells;
  RenderConfig render;
  {
    DatasetReader header(opt.base.dataset);
    render = header.config().render;
  }
  for (int p : opt.histories) {
    for (int f : opt.horizons) {
      TrainOptions t = opt.base;
      t.model.history = p;
      t.model.horizon = f;
      t.model = resolve_model(t, render);
      t.train.seed = derive_seed(opt.base.train.seed, static_cast<std::uint64_t>(p) * 1000 + static_cast<std::uint64_t>(f));
      t.out = opt.base.out / "cells" / cell_id(p, f);
      cells.push_back({p, f, std::move(t)});
    }
  }
  ensure_dir(opt.base.out);

  const WindowedData frames = load_windows(opt.base.dataset, cells.front().train.model);
  std::vector<MetricsReport> reports(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        const Cell& c = cells[i];
        const WindowedData data = frames.rewindow(c.train.model);
        std::ostringstream cell_log;
        const TrainSummary ts = train_on(c.train, data, cell_log);
        binio::write_file_atomic(c.train.out / "train.log", cell_log.str());
        MetricsReport r = evaluate_checkpoint(load_checkpoint(ts.checkpoint), data, nullptr, nullptr);
        r.run_id = cell_id(c.p, c.f);
        reports[i] = r;
        std::lock_guard lock(log_mu);
        log << r.run_id << ": mae " << fmt_double(r.mae) << " pcc " << fmt_double(r.pcc) << "\n";
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_threads = std::min<int>(opt.jobs, static_cast<int>(cells.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::string csv = report_csv_header() + "\n";
  std::vector<SweepPoint> points;
  for (const auto& r : reports) {
    csv += report_csv_row(r) + "\n";
    points.push_back({r.p, r.f, r.mae});
  }
  binio::write_file_atomic(opt.base.out / kSweepFile, csv);
  binio::write_file_atomic(opt.base.out / kSweepPlot,
                           sweep_svg(points, arch_name(cells.front().train.model) + ": test MAE by history and horizon"));
  return reports;
}

// ---- command line -------------------------------------------------------------------

namespace {

void add_model_flags(CLI::App* cmd, TrainOptions& o, std::string& rep, std::string& capacity) {
  cmd->add_option("--dataset", o.dataset, "dataset file written by gen")->required();
  cmd->add_option("--arch", o.arch, "architecture preset")->capture_default_str();
  cmd->add_option("--rep", rep, "input representation (default: the preset's first)");
  cmd->add_option("--channels", o.model.base_channels, "base channel count")->capture_default_str();
  cmd->add_option("--blocks", o.model.n_blocks, "residual blocks")->capture_default_str();
  cmd->add_option("--output-stride", o.model.output_stride, "spatial output stride")->capture_default_str();
  cmd->add_option("--capacity", capacity, "base | deep | wide")->capture_default_str();
  cmd->add_option("--depth", o.model.depth, "depth voxels after downsampling")->capture_default_str();
  cmd->add_option("--convrnn-hidden", o.model.convrnn_hidden, "hidden channels of a conv recurrent layer (0: 4x input)")
      ->capture_default_str();
  cmd->add_option("--epochs", o.train.epochs)->capture_default_str();
  cmd->add_option("--batch-size", o.train.batch_size, "0: 8 for 4D inputs, 16 otherwise")->capture_default_str();
  cmd->add_option("--lr", o.train.lr, "negative: 2.5e-4 for 4D inputs, 5e-4 otherwise")->capture_default_str();
  cmd->add_option("--init-std", o.train.init_std)->capture_default_str();
  cmd->add_option("--ema-decay", o.train.ema_decay)->capture_default_str();
  cmd->add_option("--bn-recalibration-batches", o.train.bn_recalibration_batches,
                  "batches that re-estimate the EMA model's batch-norm statistics each epoch, 0: off")
      ->capture_default_str();
  cmd->add_option("--checkpoint-every", o.train.checkpoint_every, "epochs between checkpoints, 0: only at the end")
      ->capture_default_str();
  cmd->add_option("--seed", o.train.seed)->capture_default_str();
  cmd->add_option("--out", o.out, "output directory")->capture_default_str();
}

void finish_model_flags(TrainOptions& o, const std::string& rep, const std::string& capacity) {
  const ArchPreset& preset = find_arch(o.arch);
  o.model.representation = rep.empty() ? preset.representations.front() : parse_representation(rep);
  o.model.capacity = parse_capacity(capacity);
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Force estimation from OCT volume sequences: synthetic data, training, evaluation"};
  app.set_config("--config", "", "TOML/INI file with option defaults");
  app.require_subcommand(1);

  GenOptions gen;
  std::string kind = "sinusoid";
  std::vector<double> split{0.75, 0.08, 0.17};
  bool no_speckle = false;
  auto* g = app.add_subcommand("gen", "generate a synthetic phantom dataset");
  g->add_option("--kind", kind, "sinusoid | spline")->capture_default_str();
  g->add_option("--experiments", gen.sim.experiments)->capture_default_str();
  g->add_option("--samples", gen.sim.trajectory.length, "samples per experiment")->capture_default_str();
  g->add_option("--rate", gen.sim.trajectory.sample_rate, "sampling rate in Hz")->capture_default_str();
  g->add_option("--max-depth", gen.sim.trajectory.max_depth, "maximum indentation in mm")->capture_default_str();
  g->add_option("--height", gen.sim.render.height)->capture_default_str();
  g->add_option("--width", gen.sim.render.width)->capture_default_str();
  g->add_option("--raw-depth", gen.sim.render.raw_depth)->capture_default_str();
  g->add_option("--split", split, "train,val,test fractions")->delimiter(',')->expected(3);
  g->add_flag("--no-speckle", no_speckle, "disable multiplicative speckle");
  g->add_flag("--hard-mode", gen.sim.hard_mode, "vary tissue stiffness per experiment");
  g->add_option("--seed", gen.sim.seed)->capture_default_str();
  g->add_option("--out", gen.out, "output directory")->capture_default_str();

  TrainOptions tr;
  std::string tr_rep, tr_cap = "base";
  auto* t = app.add_subcommand("train", "train one model");
  add_model_flags(t, tr, tr_rep, tr_cap);
  t->add_option("--history", tr.model.history, "frames per window p")->capture_default_str();
  t->add_option("--horizon", tr.model.horizon, "prediction horizon f")->capture_default_str();

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  e->add_option("--dataset", ev.dataset)->required();
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--out", ev.out, "output directory")->capture_default_str();
  e->add_option("--run-id", ev.run_id, "row label, also names the .errors and .svg files")->capture_default_str();
  e->add_flag("--plot", ev.plot, "write a regression / residual SVG");
  e->add_option("--compare", ev.compare, "absolute errors of another run for a paired Wilcoxon test");

  SweepOptions sw;
  std::string sw_rep, sw_cap = "base";
  auto* s = app.add_subcommand("sweep", "train and evaluate one model per (history, horizon)");
  add_model_flags(s, sw.base, sw_rep, sw_cap);
  s->add_option("--history", sw.histories, "history lengths")->delimiter(',');
  s->add_option("--horizon", sw.horizons, "horizons")->delimiter(',');
  s->add_option("--jobs", sw.jobs, "cells trained in parallel")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (*g) {
      gen.sim.trajectory.kind = parse_trajectory_kind(kind);
      gen.sim.render.speckle = !no_speckle;
      gen.sim.split_fractions = {split[0], split[1], split[2]};
      cmd_gen(gen, std::cout);
    } else if (*t) {
      finish_model_flags(tr, tr_rep, tr_cap);
      const TrainSummary r = cmd_train(tr, std::cout);
      std::cout << "wrote " << r.checkpoint.string() << " and " << r.loss_csv.string() << "\n";
    } else if (*e) {
      cmd_eval(ev, std::cout);
    } else if (*s) {
      finish_model_flags(sw.base, sw_rep, sw_cap);
      cmd_sweep(sw, std::cout);
      std::cout << "wrote " << (sw.base.out / kSweepFile).string() << "\n";
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace oct4d
