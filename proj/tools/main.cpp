#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rppgid/error.hpp"
#include "rppgid/pipeline.hpp"
#include "rppgid/report.hpp"
#include "rppgid/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rppgid;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitRuntime = 4;

struct RunConfig {
  std::uint64_t seed = 0;
  double fps = kCanonicalFs;
  double window_s = 10.0;
  double lr = 1e-3;
  int stage1_epochs = 30;
  int stage1_steps_per_epoch = 8;
  int stage2_steps = 300;
  int stage2_batch = 4;
  int stage2_eval_every = 50;
  std::vector<std::size_t> window_beats{5, 10, 20};
  unsigned threads = 1;
};

json config_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"fps", c.fps},
          {"window_s", c.window_s},
          {"lr", c.lr},
          {"stage1_epochs", c.stage1_epochs},
          {"stage1_steps_per_epoch", c.stage1_steps_per_epoch},
          {"stage2_steps", c.stage2_steps},
          {"stage2_batch", c.stage2_batch},
          {"stage2_eval_every", c.stage2_eval_every},
          {"window_beats", c.window_beats}};
}

// The thread cap is excluded: it never changes results.
std::string config_hash(const RunConfig& c) { return hex64(fnv1a(config_json(c).dump())); }

void apply_config_file(const fs::path& path, RunConfig& c) {
  std::ifstream is(path);
  if (!is) throw MissingArtifact(path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "fps") c.fps = v.get<double>();
      else if (key == "window_s") c.window_s = v.get<double>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "stage1_epochs") c.stage1_epochs = v.get<int>();
      else if (key == "stage1_steps_per_epoch") c.stage1_steps_per_epoch = v.get<int>();
      else if (key == "stage2_steps") c.stage2_steps = v.get<int>();
      else if (key == "stage2_batch") c.stage2_batch = v.get<int>();
      else if (key == "stage2_eval_every") c.stage2_eval_every = v.get<int>();
      else if (key == "window_beats") c.window_beats = v.get<std::vector<std::size_t>>();
      else if (key == "threads") c.threads = v.get<unsigned>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError("bad config value: " + std::string(e.what()));
  }
}

void validate(const RunConfig& c) {
  if (c.fps != kCanonicalFs) throw ConfigError("only fps 30 is supported");
  if (!(c.window_s > 0.0)) throw ConfigError("window_s must be positive");
  if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
  if (c.stage1_epochs < 0 || c.stage1_steps_per_epoch < 1) throw ConfigError("bad stage-1 schedule");
  if (c.stage2_steps < 0 || c.stage2_eval_every < 1 || c.stage2_batch < 1) throw ConfigError("bad stage-2 schedule");
  if (c.window_beats.empty()) throw ConfigError("window_beats must not be empty");
  for (auto w : c.window_beats)
    if (w == 0) throw ConfigError("window_beats entries must be positive");
}

std::vector<std::size_t> parse_beats(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("bad --window-beats entry '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("--window-beats is empty");
  return out;
}

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw MissingArtifact(p.string());
}

// run.json next to every command's outputs: command, effective config and the
// content hashes of its inputs.
void write_run_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                        const std::vector<fs::path>& inputs, const json& extra = json::object()) {
  json in = json::array();
  for (const auto& p : inputs) in.push_back({{"path", p.string()}, {"hash", file_hash(p)}});
  json j{{"command", command},
         {"config", config_json(cfg)},
         {"config_hash", config_hash(cfg)},
         {"seed", cfg.seed},
         {"inputs", in}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_json(dir / "run.json", j);
}

Manifest load_deid_manifest(const fs::path& p) {
  require_file(p);
  Manifest m = load_manifest(p);
  if (!m.deidentified) throw ConfigError(p.string() + " is not a de-identified manifest; run `deid` first");
  return m;
}

std::vector<fs::path> manifest_inputs(const fs::path& manifest_path, const Manifest& m) {
  std::vector<fs::path> out{manifest_path};
  for (const auto& r : m.records) {
    out.push_back(m.resolve(r.video_path));
    if (r.cppg_path) out.push_back(m.resolve(*r.cppg_path));
  }
  return out;
}

std::vector<int> source_subjects(const Manifest& m) {
  std::vector<int> ids(static_cast<std::size_t>(m.subject_count()), 0);
  for (const auto& r : m.records) ids[static_cast<std::size_t>(r.subject_id)] = r.source_subject_id;
  return ids;
}

struct SynthArgs {
  int subjects = 8;
  int sessions = 2;
  double duration = 120.0;
  int external = 0;
  double video_noise = 0.005;
  std::string out;
};

int cmd_synth(const SynthArgs& a, const RunConfig& cfg) {
  DatasetConfig dc;
  dc.n_subjects = a.subjects;
  dc.sessions = a.sessions;
  dc.duration_s = a.duration;
  dc.n_external = a.external;
  dc.video_noise = a.video_noise;
  dc.out_dir = a.out;
  dc.seed = cfg.seed;
  dc.fps = cfg.fps;
  const Manifest m = gen_dataset(dc);
  write_run_manifest(a.out, "synth", cfg, {},
                     {{"subjects", a.subjects}, {"sessions", a.sessions}, {"duration_s", a.duration},
                      {"external", a.external}, {"video_noise", a.video_noise}, {"records", m.records.size()}});
  std::cout << "wrote " << m.records.size() << " videos to " << a.out << '\n';
  return kExitOk;
}

struct DeidArgs {
  std::string manifest;
  std::string out;
};

int cmd_deid(const DeidArgs& a, const RunConfig& cfg) {
  require_file(a.manifest);
  const Manifest raw = load_manifest(a.manifest);
  const Manifest d = deidentify_dataset(raw, a.out, cfg.seed, cfg.threads);
  std::vector<fs::path> inputs{a.manifest};
  for (const auto& r : raw.records) inputs.push_back(raw.resolve(r.video_path));
  write_run_manifest(a.out, "deid", cfg, inputs);
  std::cout << "de-identified " << d.records.size() << " videos into " << a.out << '\n';
  return kExitOk;
}

struct PretrainArgs {
  std::string data;
  std::string out;
};

int cmd_pretrain(const PretrainArgs& a, const RunConfig& cfg) {
  const Manifest m = load_deid_manifest(a.data);
  const auto portions = load_portions(m, cfg.window_s, cfg.threads);
  Stage1Config c;
  c.epochs = cfg.stage1_epochs;
  c.steps_per_epoch = cfg.stage1_steps_per_epoch;
  c.lr = cfg.lr;
  c.window_s = cfg.window_s;
  c.seed = cfg.seed;
  Stage1Result r = train_stage1(stage1_inputs(portions, Split::Train), stage1_inputs(portions, Split::Val), c);
  const bool flipped =
      align_polarity(r.params, stage1_inputs(portions, Split::Train), stage1_raw(portions, Split::Train));
  fs::create_directories(a.out);
  save_checkpoint(fs::path(a.out) / "stage1.ckpt", r.params);
  json log = stage1_log_json(r);
  log["polarity_flipped"] = flipped;
  write_json(fs::path(a.out) / "stage1_log.json", log);
  write_run_manifest(a.out, "pretrain", cfg, manifest_inputs(a.data, m),
                     {{"outputs", {"stage1.ckpt", "stage1_log.json"}}});
  std::cout << "stage 1: best epoch " << r.best_epoch << ", val IPR " << format_double(r.best_val_ipr) << '\n';
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string cppg;
  std::string stage1;
  std::string out;
  bool hybrid = false;
  bool rppg_only = false;
};

int cmd_train(const TrainArgs& a, const RunConfig& cfg) {
  if (a.hybrid && a.rppg_only) throw ConfigError("--hybrid and --rppg-only are exclusive");
  const bool hybrid = !a.rppg_only;
  require_file(a.stage1);
  if (hybrid) require_file(a.cppg);
  const Manifest m = load_deid_manifest(a.data);
  const ParamStore g = load_checkpoint(a.stage1);
  const auto portions = load_portions(m, cfg.window_s, cfg.threads);
  const std::vector<LabeledTrace> external = hybrid ? load_external_cppg(a.cppg) : std::vector<LabeledTrace>{};
  Stage2Config c;
  c.steps = cfg.stage2_steps;
  c.batch = static_cast<std::size_t>(cfg.stage2_batch);
  c.lr = cfg.lr;
  c.window_s = cfg.window_s;
  c.eval_every = cfg.stage2_eval_every;
  c.hybrid = hybrid;
  c.seed = cfg.seed;
  const Stage2Result r = train_stage2(stage2_data(portions, m.subject_count(), external), g, c);
  fs::create_directories(a.out);
  save_checkpoint(fs::path(a.out) / "stage2.ckpt", r.model.merged());
  write_json(fs::path(a.out) / "stage2_log.json", stage2_log_json(r));
  write_json(fs::path(a.out) / "classes.json", {{"rppg_subjects", source_subjects(m)}});
  std::vector<fs::path> inputs = manifest_inputs(a.data, m);
  inputs.push_back(a.stage1);
  if (hybrid) inputs.push_back(a.cppg);
  write_run_manifest(a.out, "train", cfg, inputs,
                     {{"mode", hybrid ? "hybrid" : "rppg-only"},
                      {"outputs", {"stage2.ckpt", "stage2_log.json", "classes.json"}}});
  std::cout << "stage 2 (" << (hybrid ? "hybrid" : "rppg-only") << "): best step " << r.best_step << ", val EER "
            << format_double(r.best_val_eer) << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string stage1;
  std::string out;
  std::string window_beats;
};

int cmd_eval(const EvalArgs& a, RunConfig cfg) {
  if (!a.window_beats.empty()) cfg.window_beats = parse_beats(a.window_beats);
  require_file(a.checkpoint);
  if (!a.stage1.empty()) require_file(a.stage1);
  const Manifest m = load_deid_manifest(a.data);
  const MorphModel model = MorphModel::split(load_checkpoint(a.checkpoint));
  if (model.n_rppg() != static_cast<std::size_t>(m.subject_count())) {
    throw ConfigError("checkpoint has " + std::to_string(model.n_rppg()) + " identities, manifest has " +
                      std::to_string(m.subject_count()));
  }
  const auto portions = load_portions(m, cfg.window_s, cfg.threads);
  const EvaluationResult r = evaluate(model, portions, cfg.window_beats, cfg.threads);
  ReportMeta meta;
  meta.config_hash = config_hash(cfg);
  meta.seed = cfg.seed;
  meta.source_subjects = source_subjects(m);
  if (!a.stage1.empty()) meta.stage1_morphology = stage1_morphology(load_checkpoint(a.stage1), portions);

  const fs::path out(a.out);
  fs::create_directories(out);
  write_json(out / "report.json", report_json(r, meta));
  write_scores_csv(out / "scores.csv", r, model.n_rppg());
  write_template_csvs(out / "templates", r);
  std::vector<fs::path> inputs = manifest_inputs(a.data, m);
  inputs.push_back(a.checkpoint);
  if (!a.stage1.empty()) inputs.push_back(a.stage1);
  write_run_manifest(out, "eval", cfg, inputs, {{"outputs", {"report.json", "scores.csv", "templates/"}}});
  for (const auto& w : r.windows) {
    std::cout << w.window_beats << " beats: intra EER " << format_double(w.intra.mean_eer) << " AUC "
              << format_double(w.intra.mean_auc) << ", cross EER " << format_double(w.cross.mean_eer) << " AUC "
              << format_double(w.cross.mean_auc) << '\n';
  }
  std::cout << "morphology pearson " << format_double(r.morphology.mean) << '\n';
  return kExitOk;
}

struct AuthArgs {
  std::string checkpoint;
  std::string video;
  std::string landmarks;
  double fps = 30.0;
  int claim = 0;
  std::size_t window_beats = 20;
};

// A de-identified tensor (with sidecar) is used as is; raw frames are cropped,
// downsampled and permuted first, which needs --landmarks.
STMap auth_input(const AuthArgs& a, const RunConfig& cfg) {
  require_file(a.video);
  DeidVideo vd;
  if (fs::exists(deid_sidecar_path(a.video))) {
    vd = load_deid(a.video);
  } else {
    if (a.landmarks.empty()) throw ConfigError("raw video needs --landmarks");
    require_file(a.landmarks);
    const FrameSequence v = crop_face(load_frames(a.video, a.fps), load_landmarks(a.landmarks));
    vd = permute(downsample(v), video_seed(a.video, 0, cfg.seed), a.fps);
  }
  STMap m = build_st_map(vd);
  if (m.fps != kCanonicalFs) m = resample_st_map(m, kCanonicalFs);
  return normalize_st_map(m);
}

int cmd_authenticate(const AuthArgs& a, const RunConfig& cfg) {
  require_file(a.checkpoint);
  const MorphModel model = MorphModel::split(load_checkpoint(a.checkpoint));
  std::vector<int> classes(model.n_rppg());
  for (std::size_t i = 0; i < classes.size(); ++i) classes[i] = static_cast<int>(i);
  const fs::path classes_path = fs::path(a.checkpoint).parent_path() / "classes.json";
  if (fs::exists(classes_path)) {
    std::ifstream is(classes_path);
    classes = json::parse(is).at("rppg_subjects").get<std::vector<int>>();
  }
  const auto it = std::find(classes.begin(), classes.end(), a.claim);
  if (it == classes.end()) throw ConfigError("claimed subject " + std::to_string(a.claim) + " is not enrolled");
  const auto cls = static_cast<std::size_t>(it - classes.begin());

  const auto windows = authenticate(model, auth_input(a, cfg), a.window_beats);
  json out = json::array();
  std::size_t accepted = 0;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto& s = windows[w];
    const auto best = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    accepted += best == cls;
    out.push_back({{"window", w}, {"claim_score", s[cls]}, {"top_subject", classes[best]}, {"accepted", best == cls}});
  }
  const json result{{"claim", a.claim},
                    {"window_beats", a.window_beats},
                    {"windows", out},
                    {"accepted_fraction", static_cast<double>(accepted) / static_cast<double>(windows.size())},
                    {"decision", 2 * accepted > windows.size() ? "accept" : "reject"}};
  std::cout << result.dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rPPG biometric authentication toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  RunConfig cfg;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  app.add_option("--seed", seed, "global RNG seed");
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--threads", threads, "worker cap for deid and eval");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--subjects", sa.subjects);
  synth->add_option("--sessions", sa.sessions);
  synth->add_option("--duration", sa.duration, "seconds per video");
  synth->add_option("--external", sa.external, "external cPPG identities (0 = twice the subjects)");
  synth->add_option("--video-noise", sa.video_noise);
  synth->add_option("--out", sa.out)->required();

  DeidArgs da;
  auto* deid = app.add_subcommand("deid", "de-identify the videos of a manifest");
  deid->add_option("--manifest", da.manifest)->required();
  deid->add_option("--out", da.out)->required();

  PretrainArgs pa;
  auto* pretrain = app.add_subcommand("pretrain", "stage-1 unsupervised rPPG training");
  pretrain->add_option("--data", pa.data, "de-identified manifest")->required();
  pretrain->add_option("--out", pa.out)->required();
  pretrain->add_option("--epochs", cfg.stage1_epochs);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "stage-2 identity training");
  train->add_option("--data", ta.data, "de-identified manifest")->required();
  train->add_option("--cppg", ta.cppg, "external cPPG set (JSON)");
  train->add_option("--stage1", ta.stage1, "stage-1 checkpoint")->required();
  train->add_option("--out", ta.out)->required();
  train->add_option("--steps", cfg.stage2_steps);
  train->add_flag("--hybrid", ta.hybrid, "alternate rPPG and cPPG steps (default)");
  train->add_flag("--rppg-only", ta.rppg_only, "disable the cPPG branch");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "score the test splits");
  eval->add_option("--data", ea.data, "de-identified manifest")->required();
  eval->add_option("--checkpoint", ea.checkpoint)->required();
  eval->add_option("--stage1", ea.stage1, "stage-1 checkpoint for the morphology baseline");
  eval->add_option("--out", ea.out)->required();
  eval->add_option("--window-beats", ea.window_beats, "comma-separated, e.g. 5,10,20");

  AuthArgs aa;
  auto* auth = app.add_subcommand("authenticate", "verify a claimed identity on one video");
  auth->add_option("--checkpoint", aa.checkpoint)->required();
  auth->add_option("--video", aa.video, "de-identified tensor or raw frame file")->required();
  auth->add_option("--claim", aa.claim, "claimed subject id")->required();
  auth->add_option("--landmarks", aa.landmarks, "landmarks for a raw video");
  auth->add_option("--fps", aa.fps, "frame rate of a raw video");
  auth->add_option("--window-beats", aa.window_beats);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    // Explicit flags override the config file, which overrides defaults.
    RunConfig base;
    if (!config_path.empty()) apply_config_file(config_path, base);
    if (pretrain->count("--epochs")) base.stage1_epochs = cfg.stage1_epochs;
    if (train->count("--steps")) base.stage2_steps = cfg.stage2_steps;
    if (seed) base.seed = *seed;
    if (threads) base.threads = *threads;
    validate(base);

    if (*synth) return cmd_synth(sa, base);
    if (*deid) return cmd_deid(da, base);
    if (*pretrain) return cmd_pretrain(pa, base);
    if (*train) return cmd_train(ta, base);
    if (*eval) return cmd_eval(ea, base);
    if (*auth) return cmd_authenticate(aa, base);
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMissing;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
