#include "rppgid/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "rppgid/dsp.hpp"
#include "rppgid/error.hpp"

namespace rppgid {

namespace fs = std::filesystem;

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

Manifest deidentify_dataset(const Manifest& raw, const fs::path& out_dir, std::uint64_t seed, unsigned threads) {
  if (raw.deidentified) throw ConfigError("manifest is already de-identified");
  fs::create_directories(out_dir / "deid");
  fs::create_directories(out_dir / "cppg");
  Manifest out;
  out.base_dir = out_dir;
  out.deidentified = true;
  out.records.resize(raw.records.size());
  parallel_for(raw.records.size(), threads, [&](std::size_t i) {
    const ManifestRecord& r = raw.records[i];
    if (!r.landmarks_path) throw IngestError("record " + std::to_string(i) + " has no landmarks_path");
    const FrameSequence frames = load_frames(raw.resolve(r.video_path), r.fps);
    const FrameSequence face = crop_face(frames, load_landmarks(raw.resolve(*r.landmarks_path)));
    const DeidVideo vd = permute(downsample(face), video_seed(r.video_path, i, seed), r.fps);
    const std::string stem = "r" + std::to_string(i) + "_" + fs::path(r.video_path).stem().string();
    save_deid(out_dir / "deid" / (stem + ".rppgd"), vd);

    ManifestRecord d;
    d.video_path = "deid/" + stem + ".rppgd";
    d.subject_id = r.subject_id;
    d.source_subject_id = r.source_subject_id;
    d.session_tag = r.session_tag;
    d.fps = r.fps;
    if (r.cppg_path) {
      const std::string name = "cppg/" + stem + ".csv";
      fs::copy_file(raw.resolve(*r.cppg_path), out_dir / name, fs::copy_options::overwrite_existing);
      d.cppg_path = name;
      d.cppg_fs = r.cppg_fs;
    }
    out.records[i] = std::move(d);
  });
  save_manifest(out_dir / "manifest.json", out);
  return load_manifest(out_dir / "manifest.json");
}

STMap load_st_map(const Manifest& deid, std::size_t record) {
  if (!deid.deidentified) throw ConfigError("expected a de-identified manifest");
  STMap m = build_st_map(load_deid(deid.resolve(deid.records.at(record).video_path)));
  return m.fps == kCanonicalFs ? m : resample_st_map(m, kCanonicalFs);
}

namespace {

std::size_t frame_of(double seconds, double fs) { return static_cast<std::size_t>(std::llround(seconds * fs)); }

RppgSignal slice_signal(const RppgSignal& s, const Interval& span) {
  const std::size_t a = std::min(frame_of(span.start_s, s.fs), s.samples.size());
  const std::size_t b = std::min(frame_of(span.end_s, s.fs), s.samples.size());
  return {{s.samples.begin() + static_cast<std::ptrdiff_t>(a), s.samples.begin() + static_cast<std::ptrdiff_t>(b)},
          s.fs};
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  std::size_t rows = 0, cols = 0;
  for (const auto& p : parts) {
    rows += p.dim(0);
    cols = p.dim(1);
  }
  Tensor out({rows, cols});
  std::size_t r = 0;
  for (const auto& p : parts)
    for (std::size_t i = 0; i < p.dim(0); ++i, ++r)
      for (std::size_t j = 0; j < cols; ++j) out.at(r, j) = p.at(i, j);
  return out;
}

}  // namespace

std::vector<Portion> load_portions(const Manifest& deid, double window_s, unsigned threads) {
  const std::size_t n = deid.records.size();
  std::vector<STMap> maps(n);
  std::vector<std::optional<RppgSignal>> cppg(n);
  parallel_for(n, threads, [&](std::size_t i) {
    maps[i] = load_st_map(deid, i);
    const ManifestRecord& r = deid.records[i];
    if (r.cppg_path) {
      const CppgTrace t = load_cppg(deid.resolve(*r.cppg_path), *r.cppg_fs, r.subject_id);
      cppg[i] = RppgSignal{resample(t.samples, t.fs, kCanonicalFs), kCanonicalFs};
    }
  });
  std::vector<double> durations(n);
  for (std::size_t i = 0; i < n; ++i) durations[i] = static_cast<double>(maps[i].length()) / kCanonicalFs;

  std::vector<Portion> out;
  for (const VideoSplit& vs : split_dataset(deid, durations, window_s)) {
    Portion p;
    p.record = vs.record;
    p.subject = deid.records[vs.record].subject_id;
    p.session = deid.records[vs.record].session_tag;
    p.split = vs.split;
    p.span = vs.span;
    const STMap& full = maps[vs.record];
    const std::size_t a = std::min(frame_of(vs.span.start_s, kCanonicalFs), full.length());
    const std::size_t b = std::min(frame_of(vs.span.end_s, kCanonicalFs), full.length());
    p.raw = full.slice(a, b - a);
    p.input = normalize_st_map(p.raw);
    if (cppg[vs.record]) p.cppg = slice_signal(*cppg[vs.record], vs.span);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<const Portion*> select(const std::vector<Portion>& portions, Split split) {
  std::vector<const Portion*> out;
  for (const auto& p : portions)
    if (p.split == split) out.push_back(&p);
  return out;
}

std::vector<STMap> stage1_inputs(const std::vector<Portion>& portions, Split split) {
  std::vector<STMap> out;
  for (const Portion* p : select(portions, split)) out.push_back(p->input);
  return out;
}

std::vector<STMap> stage1_raw(const std::vector<Portion>& portions, Split split) {
  std::vector<STMap> out;
  for (const Portion* p : select(portions, split)) out.push_back(p->raw);
  return out;
}

std::vector<LabeledTrace> load_external_cppg(const fs::path& path) {
  std::vector<LabeledTrace> out;
  for (auto& t : load_cppg_set(path, kCanonicalFs)) out.push_back({{std::move(t.samples), t.fs}, t.subject_id});
  return out;
}

Stage2Data stage2_data(const std::vector<Portion>& portions, int n_rppg, const std::vector<LabeledTrace>& external) {
  Stage2Data d;
  for (const Portion* p : select(portions, Split::Train)) d.train.push_back({p->input, p->subject});
  for (const Portion* p : select(portions, Split::Val)) d.val.push_back({p->input, p->subject});
  d.n_rppg = n_rppg;
  d.cppg = external;
  for (const auto& t : external) d.n_cppg = std::max(d.n_cppg, t.label + 1);
  return d;
}

SegmentBatch cppg_segments(const RppgSignal& cppg) {
  const RppgSignal filtered = bandpass(cppg);
  return segment_and_resample(filtered, detect_peaks(filtered));
}

EvaluationResult evaluate(const MorphModel& m, const std::vector<Portion>& portions,
                          const std::vector<std::size_t>& window_beats, unsigned threads) {
  std::vector<const Portion*> tests = select(portions, Split::TestIntra);
  for (const Portion* p : select(portions, Split::TestCross)) tests.push_back(p);

  std::vector<std::optional<SegmentScores>> scored(tests.size());
  std::vector<std::string> errors(tests.size());
  parallel_for(tests.size(), threads, [&](std::size_t i) {
    try {
      scored[i] = score_segments(m, tests[i]->input);
    } catch (const DspError& e) {
      errors[i] = e.what();
    }
  });

  EvaluationResult res;
  const int n = static_cast<int>(m.n_rppg());
  for (std::size_t wb : window_beats) {
    std::vector<ScoreRow> intra, cross;
    for (std::size_t i = 0; i < tests.size(); ++i) {
      const Portion& p = *tests[i];
      const std::string tag = split_name(p.split);
      if (!scored[i] || scored[i]->probs.dim(0) < wb) {
        res.notes.push_back("record " + std::to_string(p.record) + " " + tag + " window " + std::to_string(wb) +
                            ": " + (scored[i] ? "insufficient beats" : errors[i]));
        continue;
      }
      std::size_t w = 0;
      for (auto& s : window_scores(scored[i]->probs, wb)) {
        ScoreRow row{p.subject, std::move(s), tag, w++};
        (p.split == Split::TestIntra ? intra : cross).push_back(row);
        res.rows.push_back(std::move(row));
        res.row_window_beats.push_back(wb);
      }
    }
    res.windows.push_back({wb, per_subject_eval(intra, n), per_subject_eval(cross, n)});
  }

  std::map<int, std::vector<Tensor>> rppg_parts, cppg_parts;
  for (std::size_t i = 0; i < tests.size(); ++i) {
    const Portion& p = *tests[i];
    if (p.split != Split::TestIntra || !scored[i] || !p.cppg) continue;
    try {
      const SegmentBatch gt = cppg_segments(*p.cppg);
      if (gt.count() == 0 || scored[i]->segments.count() == 0) continue;
      rppg_parts[p.subject].push_back(scored[i]->segments.segments);
      cppg_parts[p.subject].push_back(gt.segments);
    } catch (const DspError& e) {
      res.notes.push_back("record " + std::to_string(p.record) + " ground truth: " + e.what());
    }
  }
  std::map<int, Tensor> rs, cs;
  for (auto& [s, parts] : rppg_parts) rs[s] = concat_rows(parts);
  for (auto& [s, parts] : cppg_parts) cs[s] = concat_rows(parts);
  res.morphology = morphology_report(rs, cs);
  for (const auto& [s, t] : rs) res.rppg_templates[s] = mean_segment(t);
  for (const auto& [s, t] : cs) res.cppg_templates[s] = mean_segment(t);
  return res;
}

MorphologyReport stage1_morphology(const ParamStore& g, const std::vector<Portion>& portions) {
  std::map<int, std::vector<Tensor>> rppg_parts, cppg_parts;
  for (const Portion* p : select(portions, Split::TestIntra)) {
    if (!p->cppg) continue;
    try {
      const RppgSignal r = extract_rppg(g, p->input);
      const SegmentBatch rs = segment_and_resample(r, detect_peaks(r));
      const SegmentBatch gt = cppg_segments(*p->cppg);
      if (rs.count() == 0 || gt.count() == 0) continue;
      rppg_parts[p->subject].push_back(rs.segments);
      cppg_parts[p->subject].push_back(gt.segments);
    } catch (const DspError&) {
    }
  }
  std::map<int, Tensor> rs, cs;
  for (auto& [s, parts] : rppg_parts) rs[s] = concat_rows(parts);
  for (auto& [s, parts] : cppg_parts) cs[s] = concat_rows(parts);
  return morphology_report(rs, cs);
}

}  // namespace rppgid
