#include <lec/cli.hpp>

#include <lec/infer.hpp>
#include <lec/metrics.hpp>
#include <lec/trainer.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;

namespace lec {

namespace {

bool verbose() {
  const char* v = std::getenv("LEC_LOG");
  return v && *v && std::string(v) != "0";
}

void require_checkpoint(const std::string& checkpoint) {
  if (checkpoint.empty()) throw ConfigError("missing checkpoint (pass --checkpoint)");
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw std::runtime_error("short write to '" + path + "'");
}

std::string out_path(const std::string& out_dir, const std::string& name) {
  fs::create_directories(out_dir);
  return (fs::path(out_dir) / name).string();
}

void write_snapshot(const Config& cfg, const std::string& out_dir) {
  write_file(out_path(out_dir, "config_resolved.json"), config_to_json(cfg));
}

// flag values shared by the subcommands; only explicitly passed ones apply
struct Overrides {
  std::optional<std::string> config_path, manifest, score_source;
  std::optional<uint64_t> seed;
  std::optional<int> threads;
  std::optional<double> lambda, gamma, beta, eta;

  void attach(CLI::App* cmd, bool with_tuning) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--seed", seed, "RNG seed override");
    cmd->add_option("--threads", threads, "worker thread count");
    cmd->add_option("--manifest", manifest, "manifest path override");
    if (with_tuning) {
      cmd->add_option("--score-source", score_source, "instance scan source: sm | aware");
      cmd->add_option("--lambda", lambda, "mixture-consistency loss weight");
      cmd->add_option("--gamma", gamma, "score-consistency loss weight");
      cmd->add_option("--beta", beta, "kernel sharpness");
      cmd->add_option("--eta", eta, "memory bank momentum");
    }
  }

  bool any_tuning() const {
    return config_path || seed || score_source || lambda || gamma || beta || eta;
  }

  Config resolve() const {
    Config cfg = config_path ? load_config(*config_path) : Config{};
    apply(cfg);
    return cfg;
  }

  void apply(Config& cfg) const {
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    if (score_source) cfg.score_source = *score_source;
    if (lambda) cfg.lambda = *lambda;
    if (gamma) cfg.gamma = *gamma;
    if (beta) cfg.gmm_beta = *beta;
    if (eta) cfg.eta = *eta;
    validate_config(cfg);
  }
};

Manifest load_split(const std::string& path, const char* which) {
  if (path.empty())
    throw ConfigError(std::string("no ") + which + " manifest configured");
  return load_manifest(path);
}

// full-length scores for every video of a split
struct SplitScores {
  std::vector<Eigen::VectorXd> conf;
  std::vector<std::vector<AnomalyInstance>> dets;
  std::vector<ScoreSet> sets;
};

SplitScores score_split(const Model<double>& model, const Manifest& man, const Config& cfg) {
  const int n = int(man.videos.size());
  SplitScores out;
  out.conf.resize(size_t(n));
  out.dets.resize(size_t(n));
  out.sets.resize(size_t(n));
  parallel_for(n, cfg.threads, [&](int i) {
    const auto& v = man.videos[size_t(i)];
    const Eigen::MatrixXd X = read_features(resolve_path(man.dir, v.path)).cast<double>();
    ScoreSet sc = model.score_set(X);
    out.conf[size_t(i)] = coarse_scores(sc);
    out.dets[size_t(i)] = detect(sc, cfg);
    out.sets[size_t(i)] = std::move(sc);
  });
  return out;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_synth(const Overrides& ov, const std::string& out_dir) {
  Config cfg = ov.resolve();
  synth_dataset(cfg.synth, cfg.seed, out_dir);
  write_snapshot(cfg, out_dir);
  std::cout << "wrote " << cfg.synth.n_train << " train / " << cfg.synth.n_test
            << " test videos under " << out_dir << "\n";
  return 0;
}

int cmd_train(const Overrides& ov, const std::string& out_dir,
              const std::string& checkpoint) {
  TrainState st;
  if (!checkpoint.empty()) {
    if (ov.any_tuning())
      throw ConfigError("--checkpoint resumes with the stored config; only --out, "
                        "--manifest and --threads may be combined with it");
    st = load_checkpoint(checkpoint);
    if (ov.manifest) st.cfg.train_manifest = *ov.manifest;
    if (ov.threads) st.cfg.threads = *ov.threads;
    const Manifest man = load_split(st.cfg.train_manifest, "train");
    fit(st, man, verbose() ? &std::cerr : nullptr);
  } else {
    Config cfg = ov.resolve();
    if (ov.manifest) cfg.train_manifest = *ov.manifest;
    const Manifest man = load_split(cfg.train_manifest, "train");
    st = init_train_state(cfg, man);
    fit(st, man, verbose() ? &std::cerr : nullptr);
  }
  const std::string ckpt = out_path(out_dir, "model.ckpt");
  save_checkpoint(st, ckpt);
  write_snapshot(st.cfg, out_dir);
  std::cout << "trained " << st.epoch << " epochs (" << st.step << " steps); checkpoint: " << ckpt
            << "\n";
  return 0;
}

int cmd_eval(const Overrides& ov, const std::string& out_dir, const std::string& checkpoint) {
  require_checkpoint(checkpoint);
  TrainState st = load_checkpoint(checkpoint);
  if (ov.manifest) st.cfg.test_manifest = *ov.manifest;
  if (ov.threads) st.cfg.threads = *ov.threads;
  if (ov.score_source) st.cfg.score_source = *ov.score_source;
  validate_config(st.cfg);
  const Manifest man = load_split(st.cfg.test_manifest, "test");
  SplitScores ss = score_split(st.model, man, st.cfg);
  EvalReport rep = evaluate(man, ss.conf, ss.dets);
  write_file(out_path(out_dir, "eval_report.json"), rep.to_json());
  write_file(out_path(out_dir, "eval_report.txt"), rep.to_table());
  write_snapshot(st.cfg, out_dir);
  std::cout << rep.to_table();
  return 0;
}

int cmd_infer(const Overrides& ov, const std::string& out_dir, const std::string& checkpoint) {
  require_checkpoint(checkpoint);
  TrainState st = load_checkpoint(checkpoint);
  if (ov.manifest) st.cfg.test_manifest = *ov.manifest;
  if (ov.threads) st.cfg.threads = *ov.threads;
  if (ov.score_source) st.cfg.score_source = *ov.score_source;
  validate_config(st.cfg);
  const Manifest man = load_split(st.cfg.test_manifest, "test");
  SplitScores ss = score_split(st.model, man, st.cfg);

  std::ostringstream lines;
  int count = 0;
  for (size_t i = 0; i < man.videos.size(); ++i) {
    const auto& v = man.videos[i];
    const double sec_per_snippet = double(v.snippet_len) / v.fps;
    for (const auto& d : ss.dets[i]) {
      nlohmann::ordered_json j;
      j["video_id"] = v.id;
      j["s"] = d.s;
      j["e"] = d.e;
      j["g"] = d.g;
      j["w"] = d.w;
      j["t_start_sec"] = double(d.s - 1) * sec_per_snippet;
      j["t_end_sec"] = double(d.e) * sec_per_snippet;
      lines << j.dump() << "\n";
      ++count;
    }
  }
  write_file(out_path(out_dir, "detections.jsonl"), lines.str());
  write_snapshot(st.cfg, out_dir);
  std::cout << "wrote " << count << " detections for " << man.videos.size() << " videos\n";
  return 0;
}

int cmd_gradcheck(double tol) {
  GradCheckReport rep = grad_check(1e-5, tol);
  nlohmann::ordered_json j;
  j["max_rel_err"] = rep.max_rel_err;
  j["worst_tensor"] = rep.worst_tensor;
  j["pass"] = rep.pass;
  std::cout << j.dump(2) << "\n";
  return rep.pass ? 0 : 2;
}

std::string render_svg(const Eigen::VectorXd& conf, const Eigen::VectorXd& gmm,
                       const std::vector<Instance>& gt, int64_t T) {
  const double W = 800, H = 240, x0 = 20, y0 = 20, pw = W - 40, ph = H - 40;
  auto x_of = [&](double t) { return x0 + (t - 0.5) / double(T) * pw; };
  auto y_of = [&](double v) { return y0 + ph - std::clamp(v, 0.0, 1.0) * ph; };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  s << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  for (const auto& iv : gt) {
    const double xa = x0 + double(iv.s - 1) / double(T) * pw;
    const double xb = x0 + double(iv.e) / double(T) * pw;
    s << "<rect x=\"" << xa << "\" y=\"" << y0 << "\" width=\"" << (xb - xa) << "\" height=\""
      << ph << "\" fill=\"#ffd4d4\"/>\n";
  }
  auto polyline = [&](const Eigen::VectorXd& v, const char* color) {
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (int64_t t = 0; t < v.size(); ++t)
      s << x_of(double(t + 1)) << "," << y_of(v(t)) << (t + 1 < v.size() ? " " : "");
    s << "\"/>\n";
  };
  polyline(conf, "#2464b4");
  polyline(gmm, "#e08020");
  s << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#404040\"/>\n";
  s << "<text x=\"" << x0 << "\" y=\"14\" font-family=\"monospace\" font-size=\"11\">"
       "confidence (blue), mixture score (orange), shaded: labeled anomaly</text>\n";
  s << "</svg>\n";
  return s.str();
}

int cmd_plot(const Overrides& ov, const std::string& out_dir, const std::string& checkpoint,
             const std::string& video_id, bool svg) {
  require_checkpoint(checkpoint);
  TrainState st = load_checkpoint(checkpoint);
  if (ov.manifest) st.cfg.test_manifest = *ov.manifest;
  validate_config(st.cfg);
  const Manifest man = load_split(st.cfg.test_manifest, "test");

  size_t pick = man.videos.size();
  if (video_id.empty()) {
    for (size_t i = 0; i < man.videos.size() && pick == man.videos.size(); ++i)
      if (man.videos[i].y == 1) pick = i;
    if (pick == man.videos.size() && !man.videos.empty()) pick = 0;
  } else {
    for (size_t i = 0; i < man.videos.size(); ++i)
      if (man.videos[i].id == video_id) pick = i;
  }
  if (pick == man.videos.size())
    throw std::runtime_error("unknown video id '" + video_id + "'");
  const auto& v = man.videos[pick];

  const Eigen::MatrixXd X = read_features(resolve_path(man.dir, v.path)).cast<double>();
  const ScoreSet sc = st.model.score_set(X);
  const Eigen::VectorXd conf = coarse_scores(sc);

  std::ostringstream csv;
  csv << "t,conf,s_b_anom,one_minus_sm_normal,s_gmm,gt\n";
  for (int64_t t = 0; t < v.T; ++t) {
    const double sb = sc.has_vob ? sc.s_b(t, 1) : std::nan("");
    const int gt = t < int64_t(v.frame_labels.size()) ? v.frame_labels[size_t(t)] : 0;
    csv << (t + 1) << "," << conf(t) << "," << sb << "," << (1.0 - sc.s_m(t, 0)) << ","
        << sc.s_gmm(t) << "," << gt << "\n";
  }
  write_file(out_path(out_dir, "plot.csv"), csv.str());
  if (svg)
    write_file(out_path(out_dir, "plot.svg"), render_svg(conf, sc.s_gmm, v.instances, v.T));
  write_snapshot(st.cfg, out_dir);
  std::cout << "plotted video '" << v.id << "' (" << v.T << " snippets) into " << out_dir << "\n";
  return 0;
}

void emit_error(const char* kind, const std::string& what) {
  nlohmann::ordered_json j;
  j["error"] = what;
  j["kind"] = kind;
  std::cerr << j.dump() << "\n";
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"weakly supervised video anomaly localization"};
  app.require_subcommand(1);

  Overrides ov;
  std::string out_dir = ".";
  std::string checkpoint;
  std::string video_id;
  bool svg = false;
  double tol = 1e-4;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  {
    Overrides* o = &ov;
    o->attach(synth, false);
    synth->add_option("--out", out_dir, "output directory")->required();
  }
  CLI::App* train = app.add_subcommand("train", "train a model");
  ov.attach(train, true);
  train->add_option("--out", out_dir, "output directory");
  train->add_option("--checkpoint", checkpoint, "resume from this checkpoint");

  CLI::App* eval = app.add_subcommand("eval", "score a test split and report metrics");
  ov.attach(eval, true);
  eval->add_option("--out", out_dir, "output directory");
  eval->add_option("--checkpoint", checkpoint, "trained checkpoint");

  CLI::App* infer = app.add_subcommand("infer", "emit detections as JSON lines");
  ov.attach(infer, true);
  infer->add_option("--out", out_dir, "output directory");
  infer->add_option("--checkpoint", checkpoint, "trained checkpoint");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gradcheck->add_option("--tol", tol, "max relative error allowed");

  CLI::App* plot = app.add_subcommand("plot", "per-snippet score curves for one video");
  ov.attach(plot, true);
  plot->add_option("--out", out_dir, "output directory");
  plot->add_option("--checkpoint", checkpoint, "trained checkpoint");
  plot->add_option("--video", video_id, "video id (default: first anomalous)");
  plot->add_flag("--svg", svg, "also render an SVG chart");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(ov, out_dir);
    if (train->parsed()) return cmd_train(ov, out_dir, checkpoint);
    if (eval->parsed()) return cmd_eval(ov, out_dir, checkpoint);
    if (infer->parsed()) return cmd_infer(ov, out_dir, checkpoint);
    if (gradcheck->parsed()) return cmd_gradcheck(tol);
    if (plot->parsed()) return cmd_plot(ov, out_dir, checkpoint, video_id, svg);
    return 1;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    emit_error("config", e.what());
    return 1;
  } catch (const ConfigError& e) {
    emit_error("config", e.what());
    return 1;
  } catch (const std::exception& e) {
    emit_error("runtime", e.what());
    return 2;
  }
}

}  // namespace lec
