// sbtrack command-line front end.
//
//   sbtrack synth   --out DIR [--config FILE] [--seed N] [--count N] [--benchmark]
//   sbtrack train   --data DIR --out DIR [--config FILE]
//   sbtrack track   --data DIR --model FILE --mode online|mht --out PATH
//   sbtrack eval    --gt PATH --pred PATH --out DIR
//   sbtrack ablate  --out DIR [--data DIR] [--seeds N]
//   sbtrack plot    --in CSV --out SVG
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include "CLI11.hpp"

#include "sbtrack/association.hpp"
#include "sbtrack/experiment.hpp"
#include "sbtrack/io.hpp"
#include "sbtrack/metrics.hpp"
#include "sbtrack/plot.hpp"
#include "sbtrack/sbto.hpp"
#include "sbtrack/synth.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace sbtrack;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create '" + dir.string() + "': " + ec.message());
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int count = 1;
  bool benchmark = false;
};

void run_synth(const SynthArgs& a) {
  if (a.count < 1) throw UsageError("--count must be >= 1");
  if (a.benchmark) {
    BenchmarkSpec spec;
    if (!a.config.empty()) spec.scene = synth_config_from(load_key_values(a.config), spec.scene, a.config);
    if (a.seed) spec.seed = *a.seed;
    for (const auto& s : training_scenarios(spec)) write_bundle(s, fs::path(a.out) / "train" / s.name);
    for (const auto& s : benchmark_scenarios(spec)) write_bundle(s, fs::path(a.out) / "test" / s.name);
    std::printf("wrote %d training and %d test scenarios to %s\n", spec.train_scenarios, spec.test_scenarios, a.out.c_str());
    return;
  }
  SynthConfig cfg;
  if (!a.config.empty()) cfg = synth_config_from(load_key_values(a.config), cfg, a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.count == 1) {
    write_bundle(synth_generate(cfg), a.out);
    std::printf("wrote scenario '%s' to %s\n", cfg.name.c_str(), a.out.c_str());
    return;
  }
  const std::string base = cfg.name;
  for (int i = 0; i < a.count; ++i) {
    SynthConfig c = cfg;
    char name[64];
    std::snprintf(name, sizeof name, "%s%02d", base.c_str(), i);
    c.name = name;
    c.seed = mix64(cfg.seed ^ mix64(static_cast<std::uint64_t>(i)));
    write_bundle(synth_generate(c), fs::path(a.out) / c.name);
  }
  std::printf("wrote %d scenarios to %s\n", a.count, a.out.c_str());
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  double near_weight = 8.0;
  int checkpoint_every = 0;
  int jobs = 1;
};

std::string loss_csv(const std::vector<EpochStats>& curve) {
  std::string out = "epoch,mean_loss,margin_component,rank_component\n";
  char buf[128];
  for (const auto& s : curve) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", s.epoch, s.mean_loss, s.margin, s.rank);
    out += buf;
  }
  return out;
}

void run_train(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) {
    const KeyValues kv = load_key_values(a.config);
    cfg = train_config_from(kv, cfg, a.config);
    if (!kv.count("learning_rate")) cfg.learning_rate = default_learning_rate(cfg.encoder.variant);
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  cfg.jobs = a.jobs;
  cfg.validate();
  const auto scenarios = load_collection(a.data);
  for (const auto& s : scenarios) {
    if (s.feature_dim != cfg.encoder.input_dim) {
      throw DataError("scenario '" + s.name + "' has feature_dim " + std::to_string(s.feature_dim) +
                      " but the model expects input_dim " + std::to_string(cfg.encoder.input_dim));
    }
  }
  auto clips = collect_clips(scenarios, cfg, mix64(cfg.seed ^ 0xDA7A), a.near_weight);
  if (clips.empty()) throw DataError("no training clips of length " + std::to_string(cfg.n_length) + " in " + a.data);
  ensure_dir(a.out);
  const fs::path out(a.out);
  TrainResult r = train(std::move(clips), cfg, [&](const EpochStats& s, const ModelParams& p) {
    std::fprintf(stderr, "epoch %d loss %.4f (margin %.4f rank %.4f)\n", s.epoch, s.mean_loss, s.margin, s.rank);
    if (a.checkpoint_every > 0 && s.epoch % a.checkpoint_every == 0 && s.epoch < cfg.epochs) {
      char name[64];
      std::snprintf(name, sizeof name, "model_epoch%04d.ckpt", s.epoch);
      save_checkpoint(p, out / name);
    }
  });
  save_checkpoint(r.params, out / "model.ckpt");
  detail::write_text(out / "loss.csv", loss_csv(r.curve));
  detail::write_text(out / "train.cfg", format_key_values(to_key_values(cfg)));
  std::printf("trained %d epochs, final loss %.6f, wrote %s\n", cfg.epochs,
              r.curve.empty() ? 0.0 : r.curve.back().mean_loss, (out / "model.ckpt").string().c_str());
}

// ------------------------------------------------------------------ track

struct TrackArgs {
  std::string data;
  std::string model;
  std::string mode = "online";
  std::string out;
  AssocConfig assoc;
  int jobs = 1;
};

void run_track(TrackArgs a) {
  a.assoc.mode = assoc_mode_from_string(a.mode);
  a.assoc.validate();
  const ModelParams p = load_checkpoint(a.model);
  const bool single = is_bundle(a.data);
  const auto scenarios = load_collection(a.data);
  std::vector<std::vector<Trajectory>> results(scenarios.size());
  parallel_for(scenarios.size(), a.jobs, [&](std::size_t i) { results[i] = track(scenarios[i].detections, p, a.assoc); });
  if (single) {
    const fs::path out(a.out);
    if (out.has_parent_path()) ensure_dir(out.parent_path());
    write_mot(results[0], out);
  } else {
    ensure_dir(a.out);
    for (std::size_t i = 0; i < scenarios.size(); ++i) write_mot(results[i], fs::path(a.out) / (scenarios[i].name + ".txt"));
  }
  std::size_t n = 0;
  for (const auto& r : results) n += r.size();
  std::printf("tracked %zu scenario(s), %zu trajectories, wrote %s\n", scenarios.size(), n, a.out.c_str());
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
  std::string gt;
  std::string pred;
  std::string out;
  double tau = 0.5;
};

// Ground truth by sequence name: a MOT file, a bundle, or a collection.
std::vector<std::pair<std::string, std::vector<Trajectory>>> load_gt(const fs::path& path) {
  std::vector<std::pair<std::string, std::vector<Trajectory>>> out;
  if (fs::is_regular_file(path)) {
    out.push_back({path.stem().string(), load_trajectories(path)});
    return out;
  }
  if (!fs::is_directory(path)) throw DataError("'" + path.string() + "' does not exist");
  auto from_bundle = [](const fs::path& dir) {
    const KeyValues meta = load_key_values(dir / "meta");
    const auto it = meta.find("name");
    return std::pair{it != meta.end() ? it->second : dir.filename().string(), load_trajectories(dir / "gt.txt")};
  };
  if (is_bundle(path)) {
    out.push_back(from_bundle(path));
    return out;
  }
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(path)) {
    if (e.is_directory() && is_bundle(e.path())) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DataError("'" + path.string() + "' contains no ground truth");
  for (const auto& d : dirs) out.push_back(from_bundle(d));
  return out;
}

void run_eval(const EvalArgs& a) {
  if (!(a.tau > 0.0 && a.tau <= 1.0)) throw UsageError("--iou must lie in (0,1]");
  const auto gts = load_gt(a.gt);
  std::vector<EvalReport> reports;
  const fs::path pred(a.pred);
  if (fs::is_regular_file(pred)) {
    if (gts.size() != 1) throw DataError("a single prediction file needs a single ground-truth sequence");
    reports.push_back(clear_mot(gts[0].second, load_trajectories(pred), a.tau));
    reports.back().name = gts[0].first;
  } else if (fs::is_directory(pred)) {
    for (const auto& [name, gt] : gts) {
      const fs::path f = pred / (name + ".txt");
      if (!fs::exists(f)) throw DataError("missing prediction file '" + f.string() + "'");
      reports.push_back(clear_mot(gt, load_trajectories(f), a.tau));
      reports.back().name = name;
    }
  } else {
    throw DataError("'" + a.pred + "' does not exist");
  }
  std::vector<EvalReport> rows = reports;
  if (reports.size() > 1) rows.push_back(aggregate(reports, "all"));
  ensure_dir(a.out);
  const std::string table = report_table(rows);
  std::string csv = std::string(kReportCsvHeader) + "\n";
  for (const auto& r : rows) csv += report_csv_row(r) + "\n";
  detail::write_text(fs::path(a.out) / "report.txt", table);
  detail::write_text(fs::path(a.out) / "report.csv", csv);
  std::fputs(table.c_str(), stdout);
}

// ------------------------------------------------------------------ ablate

struct AblateArgs {
  std::string data;
  std::string config;
  std::string out;
  int seeds = 5;
  bool skip_kc = false;
  bool skip_encoders = false;
  int jobs = 1;
};

void run_ablate(const AblateArgs& a) {
  if (a.seeds < 1) throw UsageError("--seeds must be >= 1");
  TrainConfig base;
  if (!a.config.empty()) base = train_config_from(load_key_values(a.config), base, a.config);
  BenchmarkSpec spec;
  std::vector<Scenario> train_set, bench;
  if (a.data.empty()) {
    train_set = training_scenarios(spec);
    bench = benchmark_scenarios(spec);
  } else {
    train_set = load_collection(fs::path(a.data) / "train");
    bench = load_collection(fs::path(a.data) / "test");
  }

  struct Group {
    std::string name;
    ConfigGrid grid;
  };
  std::vector<Group> groups{{"loss", loss_ablation_grid(base)}};
  if (!a.skip_kc) groups.push_back({"kc", kc_grid(base)});
  if (!a.skip_encoders) groups.push_back({"encoder", encoder_grid(base)});

  // Identical configurations across groups are trained once.
  ConfigGrid unique;
  std::vector<std::vector<std::size_t>> index(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (const auto& [label, cfg] : groups[g].grid) {
      const KeyValues kv = to_key_values(cfg);
      std::size_t at = unique.size();
      for (std::size_t u = 0; u < unique.size(); ++u) {
        if (to_key_values(unique[u].second) == kv) at = u;
      }
      if (at == unique.size()) unique.push_back({label, cfg});
      index[g].push_back(at);
    }
  }
  const auto seeds = seed_range(a.seeds);
  const AssocConfig assoc;
  const auto trials = run_grid(unique, seeds, train_set, bench, assoc, spec.near_weight, a.jobs);

  std::string rows = "group,label,loss_mode,variant,K,C,seed,MOTA,IDS,IDF1,FP,FN,final_loss\n";
  std::string summary = "group,label,median_MOTA,median_IDS,median_IDF1\n";
  char buf[512];
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t i = 0; i < groups[g].grid.size(); ++i) {
      const auto& [label, cfg] = groups[g].grid[i];
      const std::span<const TrialResult> part(trials.data() + index[g][i] * seeds.size(), seeds.size());
      for (const auto& t : part) {
        std::snprintf(buf, sizeof buf, "%s,%s,%s,%s,%d,%d,%llu,%.4f,%ld,%.4f,%ld,%ld,%.6f\n", groups[g].name.c_str(),
                      label.c_str(), to_string(cfg.loss_mode).c_str(), to_string(cfg.encoder.variant).c_str(), cfg.K,
                      cfg.C, static_cast<unsigned long long>(t.train.seed), t.report.mota, t.report.ids, t.report.idf1,
                      t.report.fp, t.report.fn, t.final_loss);
        rows += buf;
      }
      const TrialSummary s = summarize(label, part);
      std::snprintf(buf, sizeof buf, "%s,%s,%.4f,%.1f,%.4f\n", groups[g].name.c_str(), label.c_str(), s.median_mota,
                    s.median_ids, s.median_idf1);
      summary += buf;
      std::printf("%-8s %-22s median MOTA %.4f  median IDS %.1f\n", groups[g].name.c_str(), label.c_str(),
                  s.median_mota, s.median_ids);
    }
  }
  ensure_dir(a.out);
  detail::write_text(fs::path(a.out) / "ablation.csv", rows);
  detail::write_text(fs::path(a.out) / "summary.csv", summary);
}

// ------------------------------------------------------------------ plot

struct PlotArgs {
  std::string in;
  std::string out;
  std::string metric;
  std::string title;
};

void run_plot(const PlotArgs& a) {
  const CsvTable t = load_csv(a.in);
  std::string svg;
  const std::string title = a.title.empty() ? fs::path(a.in).filename().string() : a.title;
  if (t.column("epoch") >= 0 && t.column("mean_loss") >= 0) {
    std::vector<Series> series;
    const int ex = t.column("epoch");
    for (const char* name : {"mean_loss", "margin_component", "rank_component"}) {
      const int c = t.column(name);
      if (c < 0) continue;
      Series s{name, {}, {}};
      for (const auto& row : t.rows) {
        s.x.push_back(csv_number(row[static_cast<std::size_t>(ex)], a.in));
        s.y.push_back(csv_number(row[static_cast<std::size_t>(c)], a.in));
      }
      series.push_back(std::move(s));
    }
    svg = line_chart_svg(series, title, "epoch", "loss");
  } else {
    int label_col = t.column("label") >= 0 ? t.column("label") : t.column("sequence");
    std::string metric = a.metric;
    if (metric.empty()) metric = t.column("median_MOTA") >= 0 ? "median_MOTA" : "MOTA";
    const int mc = t.column(metric);
    if (label_col < 0 || mc < 0) {
      throw DataError(a.in + ": not a loss curve, ablation summary or report (no '" + metric + "' column)");
    }
    const int group_col = t.column("group");
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& row : t.rows) {
      std::string l = row[static_cast<std::size_t>(label_col)];
      if (group_col >= 0) l = row[static_cast<std::size_t>(group_col)] + ":" + l;
      labels.push_back(l);
      values.push_back(csv_number(row[static_cast<std::size_t>(mc)], a.in));
    }
    svg = bar_chart_svg(labels, values, title, metric);
  }
  const fs::path out(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  detail::write_text(out, svg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sbtrack: search-based tracklet scoring, training and multi-object tracking"};
  app.require_subcommand(1, 1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate synthetic scenario bundles (gt.txt, det.txt, emb.bin, meta)");
  synth->add_option("--out", sa.out, "Output bundle directory (a parent directory when --count > 1 or --benchmark)")->required();
  synth->add_option("--config", sa.config, "Key/value scenario config; unset keys keep their defaults");
  synth->add_option("--seed", sa.seed, "Override the config seed");
  synth->add_option("--count", sa.count, "Number of scenarios; above 1 each goes to OUT/<name>NN")->capture_default_str();
  synth->add_flag("--benchmark", sa.benchmark, "Write the desk benchmark: OUT/train and OUT/test collections");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train a scorer; writes model.ckpt, loss.csv and train.cfg");
  trn->add_option("--data", ta.data, "Bundle or directory of bundles with ground truth")->required();
  trn->add_option("--out", ta.out, "Output directory")->required();
  trn->add_option("--config", ta.config, "Key/value training config; unset keys keep their defaults (learning_rate defaults to 2e-3 for self_attention)");
  trn->add_option("--seed", ta.seed, "Override the config seed");
  trn->add_option("--epochs", ta.epochs, "Override the config epoch count");
  trn->add_option("--near-weight", ta.near_weight, "Clip sampling preference for candidates overlapping the true box")
      ->capture_default_str();
  trn->add_option("--checkpoint-every", ta.checkpoint_every, "Also write model_epochNNNN.ckpt every N epochs (0 = off)")
      ->capture_default_str();
  trn->add_option("--jobs", ta.jobs, "Worker threads for episodes within a batch")->capture_default_str()->check(CLI::PositiveNumber);

  TrackArgs tk;
  auto* trk = app.add_subcommand("track", "Track detections with a trained scorer; writes MOT result CSV");
  trk->add_option("--data", tk.data, "Bundle (writes one file) or directory of bundles (writes OUT/<name>.txt)")->required();
  trk->add_option("--model", tk.model, "Checkpoint written by train")->required();
  trk->add_option("--mode", tk.mode, "Association: online (Hungarian) or mht")->capture_default_str()->check(CLI::IsMember({"online", "mht"}));
  trk->add_option("--out", tk.out, "Output file or directory")->required();
  trk->add_option("--iou-gate", tk.assoc.iou_gate, "Minimum IoU between a track's last box and a candidate")->capture_default_str();
  trk->add_option("--score-gate", tk.assoc.score_gate, "Minimum logistic score of an accepted extension")->capture_default_str();
  trk->add_option("--mht-k", tk.assoc.mht_K, "Leaves kept per hypothesis tree")->capture_default_str();
  trk->add_option("--nscan", tk.assoc.nscan_N, "MHT decision delay in frames")->capture_default_str();
  trk->add_option("--birth-min", tk.assoc.birth_min, "Consecutive hits before a track is confirmed")->capture_default_str();
  trk->add_option("--death-max", tk.assoc.death_max, "Consecutive misses that end a track")->capture_default_str();
  trk->add_option("--det-conf-min", tk.assoc.det_conf_min, "Detections below this confidence are dropped")->capture_default_str();
  trk->add_option("--miss-penalty", tk.assoc.miss_penalty, "MHT penalty subtracted for a missed frame")->capture_default_str();
  trk->add_option("--mwis-exact-limit", tk.assoc.mwis.exact_limit, "Largest conflict component solved exactly")->capture_default_str();
  trk->add_option("--jobs", tk.jobs, "Scenarios tracked in parallel")->capture_default_str()->check(CLI::PositiveNumber);

  EvalArgs ea;
  auto* evl = app.add_subcommand("eval", "CLEAR MOT and ID metrics; writes report.txt and report.csv");
  evl->add_option("--gt", ea.gt, "Ground-truth MOT file, bundle, or directory of bundles")->required();
  evl->add_option("--pred", ea.pred, "Result MOT file, or directory of <name>.txt files")->required();
  evl->add_option("--out", ea.out, "Output directory")->required();
  evl->add_option("--iou", ea.tau, "IoU threshold for a match")->capture_default_str();

  AblateArgs aa;
  auto* abl = app.add_subcommand("ablate", "Loss ablation, K/C sweep and encoder comparison; writes ablation.csv and summary.csv");
  abl->add_option("--out", aa.out, "Output directory")->required();
  abl->add_option("--data", aa.data, "Directory with train/ and test/ collections (default: built-in desk benchmark)");
  abl->add_option("--config", aa.config, "Key/value base training config");
  abl->add_option("--seeds", aa.seeds, "Training seeds 1..N per configuration")->capture_default_str();
  abl->add_flag("--skip-kc", aa.skip_kc, "Leave out the K/C sweep");
  abl->add_flag("--skip-encoders", aa.skip_encoders, "Leave out the encoder comparison");
  abl->add_option("--jobs", aa.jobs, "Trials run in parallel")->capture_default_str()->check(CLI::PositiveNumber);

  PlotArgs pa;
  auto* plt = app.add_subcommand("plot", "Render a loss curve, ablation summary or eval report CSV as SVG");
  plt->add_option("--in", pa.in, "Input CSV")->required();
  plt->add_option("--out", pa.out, "Output SVG file")->required();
  plt->add_option("--metric", pa.metric, "Column plotted for bar charts (default median_MOTA or MOTA)");
  plt->add_option("--title", pa.title, "Chart title (default: input file name)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) run_synth(sa);
    else if (*trn) run_train(ta);
    else if (*trk) run_track(tk);
    else if (*evl) run_eval(ea);
    else if (*abl) run_ablate(aa);
    else if (*plt) run_plot(pa);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "sbtrack: usage error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "sbtrack: usage error: %s\n", e.what());
    return 1;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "sbtrack: numeric failure: %s\n", e.what());
    return 3;
  } catch (const DataError& e) {
    std::fprintf(stderr, "sbtrack: data error: %s\n", e.what());
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "sbtrack: data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "sbtrack: data error: %s\n", e.what());
    return 2;
  }
  return 0;
}
