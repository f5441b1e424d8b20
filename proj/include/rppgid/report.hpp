#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rppgid/cp2d.hpp"
#include "rppgid/morph.hpp"
#include "rppgid/pipeline.hpp"

namespace rppgid {

// Shortest round-trip decimal form; non-finite values become "nan"/"inf".
std::string format_double(double v);

// FNV-1a of a file's bytes as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

nlohmann::json to_json(const EvalReport& r);
nlohmann::json to_json(const MorphologyReport& r);
nlohmann::json stage1_log_json(const Stage1Result& r);
nlohmann::json stage2_log_json(const Stage2Result& r);

struct ReportMeta {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<int> source_subjects;  // dense class index -> id in the source manifest
  std::optional<MorphologyReport> stage1_morphology;
};

// report.json: headline numbers come from the intra-session split at the
// longest window length.
nlohmann::json report_json(const EvaluationResult& r, const ReportMeta& meta);

// Columns: subject, window_beats, window_idx, session, score_0..score_{N-1}.
void write_scores_csv(const std::filesystem::path& path, const EvaluationResult& r, std::size_t n_classes);

// One CSV per subject under dir: sample, rppg, cppg.
void write_template_csvs(const std::filesystem::path& dir, const EvaluationResult& r);

// Writes JSON with two-space indentation and a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace rppgid
