#include "rppgid/report.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "rppgid/error.hpp"
#include "rppgid/rng.hpp"

namespace rppgid {

using nlohmann::json;
namespace fs = std::filesystem;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_hash(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifact(path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return hex64(fnv1a(bytes));
}

namespace {

// NaN has no JSON form; it is written as null.
json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

json to_json(const EvalReport& r) {
  json subjects = json::array();
  for (const auto& s : r.per_subject) {
    subjects.push_back(
        {{"subject", s.subject}, {"eer", s.eer}, {"auc", s.auc}, {"positives", s.positives}, {"negatives", s.negatives}});
  }
  return {{"per_subject", subjects}, {"skipped", r.skipped}, {"mean_eer", number(r.mean_eer)},
          {"mean_auc", number(r.mean_auc)}};
}

json to_json(const MorphologyReport& r) {
  json per = json::array();
  for (const auto& [s, v] : r.pearson) per.push_back({{"subject", s}, {"pearson", v}});
  return {{"per_subject", per}, {"skipped", r.skipped}, {"mean", number(r.mean)}};
}

json stage1_log_json(const Stage1Result& r) {
  json log = json::array();
  for (const auto& e : r.log) log.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"val_ipr", e.val_ipr}});
  return {{"best_epoch", r.best_epoch}, {"best_val_ipr", r.best_val_ipr}, {"log", log}};
}

json stage2_log_json(const Stage2Result& r) {
  json log = json::array();
  for (const auto& e : r.log) {
    json j{{"step", e.step}, {"branch", e.branch}, {"loss", number(e.loss)}};
    if (e.branch == "val") j["val_eer"] = number(e.val_eer);
    if (e.skipped) {
      j["skipped"] = true;
      j["note"] = e.note;
    }
    log.push_back(std::move(j));
  }
  return {{"best_step", r.best_step}, {"best_val_eer", number(r.best_val_eer)},
          {"best_val_loss", number(r.best_val_loss)}, {"log", log}};
}

json report_json(const EvaluationResult& r, const ReportMeta& meta) {
  json windows = json::array();
  for (const auto& w : r.windows) {
    windows.push_back({{"window_beats", w.window_beats}, {"intra", to_json(w.intra)}, {"cross", to_json(w.cross)}});
  }
  json out{{"config_hash", meta.config_hash},
           {"seed", meta.seed},
           {"subjects", meta.source_subjects},
           {"windows", windows},
           {"morphology", to_json(r.morphology)},
           {"pearson_mean", number(r.morphology.mean)},
           {"notes", r.notes}};
  if (!r.windows.empty()) {
    const WindowReport* longest = &r.windows.front();
    for (const auto& w : r.windows)
      if (w.window_beats > longest->window_beats) longest = &w;
    out["headline_window_beats"] = longest->window_beats;
    out["per_subject"] = to_json(longest->intra)["per_subject"];
    out["mean_eer"] = number(longest->intra.mean_eer);
    out["mean_auc"] = number(longest->intra.mean_auc);
  }
  if (meta.stage1_morphology) out["stage1_morphology"] = to_json(*meta.stage1_morphology);
  return out;
}

void write_scores_csv(const fs::path& path, const EvaluationResult& r, std::size_t n_classes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  os << "subject,window_beats,window_idx,session";
  for (std::size_t j = 0; j < n_classes; ++j) os << ",score_" << j;
  os << '\n';
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const ScoreRow& row = r.rows[i];
    os << row.true_subject << ',' << r.row_window_beats[i] << ',' << row.window_index << ',' << row.session;
    for (double s : row.scores) os << ',' << format_double(s);
    os << '\n';
  }
}

void write_template_csvs(const fs::path& dir, const EvaluationResult& r) {
  fs::create_directories(dir);
  for (const auto& [s, rppg] : r.rppg_templates) {
    const auto c = r.cppg_templates.find(s);
    if (c == r.cppg_templates.end()) continue;
    char name[32];
    std::snprintf(name, sizeof name, "subject_%02d.csv", s);
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw FormatError("cannot write " + (dir / name).string());
    os << "sample,rppg,cppg\n";
    for (std::size_t i = 0; i < rppg.size(); ++i) {
      os << i << ',' << format_double(rppg[i]) << ',' << format_double(c->second[i]) << '\n';
    }
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace rppgid
