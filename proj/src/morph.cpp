#include "rppgid/morph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "rppgid/error.hpp"
#include "rppgid/eval.hpp"
#include "rppgid/ops.hpp"
#include "rppgid/rng.hpp"

namespace rppgid {

ParamStore init_model_h(std::uint64_t seed) {
  ParamStore h(seed);
  Rng rng(seed);
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    h.init_normal("h/" + name + ".w", {in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    h.init_zeros("h/" + name + ".b", {out});
  };
  auto norm = [&](const std::string& name) {
    h.init_constant("h/" + name + ".gamma", {kTokenDim}, 1.0);
    h.init_zeros("h/" + name + ".beta", {kTokenDim});
  };
  h.init_normal("h/conv1.w", {16, 1, 5}, std::sqrt(2.0 / 5.0), rng);
  h.init_zeros("h/conv1.b", {16});
  h.init_normal("h/conv2.w", {32, 16, 5}, std::sqrt(2.0 / 80.0), rng);
  h.init_zeros("h/conv2.b", {32});
  h.init_normal("h/pos", {kTokens * kTokenDim}, 0.1, rng);
  for (std::size_t l = 0; l < kEncoderLayers; ++l) {
    const std::string p = "enc" + std::to_string(l) + ".";
    for (const char* w : {"wq", "wk", "wv"})
      h.init_normal("h/" + p + w, {kTokenDim, kTokenDim}, 1.0 / std::sqrt(static_cast<double>(kTokenDim)), rng);
    dense(p + "wo", kTokenDim, kTokenDim);
    norm(p + "ln1");
    dense(p + "ff1", kTokenDim, 64);
    dense(p + "ff2", 64, kTokenDim);
    norm(p + "ln2");
  }
  dense("feat", kTokenDim, kFeatureDim);
  return h;
}

ParamStore init_head(const std::string& prefix, std::size_t n_classes, std::uint64_t seed) {
  if (n_classes < 2) throw ConfigError("a classification head needs at least 2 classes");
  ParamStore p(seed);
  Rng rng(seed);
  p.init_normal(prefix + "w", {kFeatureDim, n_classes}, 1.0 / std::sqrt(static_cast<double>(kFeatureDim)), rng);
  p.init_zeros(prefix + "b", {n_classes});
  return p;
}

Var forward_h(Tape& t, const ParamStore& h, Var segments, bool trainable) {
  const Shape s = t.shape(segments);
  if (s.size() != 2 || s[1] != kSegmentLength) {
    throw ModelError("H expects [K x 90] segments, got " + shape_str(s));
  }
  const std::size_t K = s[0];
  auto p = [&](const std::string& name) { return bind_param(t, h, "h/" + name, trainable); };
  auto dense = [&](Var x, const std::string& name) { return ops::dense(t, x, p(name + ".w"), p(name + ".b")); };

  Var x = ops::reshape(t, segments, {K, 1, kSegmentLength});
  x = ops::maxpool_last(t, ops::relu(t, ops::add_channel_bias(t, ops::conv1d(t, x, p("conv1.w")), p("conv1.b"))), 2);
  x = ops::maxpool_last(t, ops::relu(t, ops::add_channel_bias(t, ops::conv1d(t, x, p("conv2.w")), p("conv2.b"))), 2);
  x = ops::swap_last2(t, x);  // [K x 22 x 32]
  x = ops::reshape(t, ops::add_bias(t, ops::reshape(t, x, {K, kTokens * kTokenDim}), p("pos")),
                   {K, kTokens, kTokenDim});
  for (std::size_t l = 0; l < kEncoderLayers; ++l) {
    const std::string n = "enc" + std::to_string(l) + ".";
    Var a = ops::attention(t, x, p(n + "wq"), p(n + "wk"), p(n + "wv"), kHeads);
    x = ops::layer_norm(t, ops::add(t, x, dense(a, n + "wo")), p(n + "ln1.gamma"), p(n + "ln1.beta"));
    Var f = dense(ops::relu(t, dense(x, n + "ff1")), n + "ff2");
    x = ops::layer_norm(t, ops::add(t, x, f), p(n + "ln2.gamma"), p(n + "ln2.beta"));
  }
  return dense(ops::mean_axis(t, x, 1), "feat");
}

Tensor forward_h(const ParamStore& h, const Tensor& segments) {
  Tape t;
  return t.value(forward_h(t, h, t.constant(segments), false));
}

Var forward_head(Tape& t, const ParamStore& head, const std::string& prefix, Var features, bool trainable) {
  return ops::softmax(t, ops::dense(t, features, bind_param(t, head, prefix + "w", trainable),
                                    bind_param(t, head, prefix + "b", trainable)));
}

Var ce_loss(Tape& t, Var probs, std::size_t label) { return ops::nll(t, probs, label, 1e-12); }

double ce_loss(const Tensor& probs, std::size_t label) {
  Tape t;
  return t.value(ce_loss(t, t.constant(probs), label)).item();
}

ParamStore MorphModel::merged() const {
  ParamStore all = g;
  all.merge(h);
  all.merge(hr);
  all.merge(hc);
  return all;
}

MorphModel MorphModel::split(const ParamStore& all) {
  MorphModel m{all.subset("g/"), all.subset("h/"), all.subset("hr/"), all.subset("hc/")};
  if (m.g.size() == 0 || m.h.size() == 0 || m.hr.size() == 0 || m.hc.size() == 0) {
    throw FormatError("checkpoint lacks one of the g/, h/, hr/, hc/ parameter groups");
  }
  return m;
}

std::size_t MorphModel::n_rppg() const { return hr.get("hr/b").size(); }
std::size_t MorphModel::n_cppg() const { return hc.get("hc/b").size(); }

std::array<std::uint64_t, 4> MorphModel::fingerprints() const {
  return {g.fingerprint(), h.fingerprint(), hr.fingerprint(), hc.fingerprint()};
}

SegmentScores score_segments(const MorphModel& m, const STMap& input) {
  SegmentScores out;
  out.rppg = extract_rppg(m.g, input);
  out.segments = segment_and_resample(out.rppg, detect_peaks(out.rppg));
  Tape t;
  Var f = forward_h(t, m.h, t.constant(out.segments.segments), false);
  out.probs = t.value(forward_head(t, m.hr, "hr/", f, false));
  return out;
}

std::vector<std::vector<double>> window_scores(const Tensor& probs, std::size_t window_beats) {
  if (window_beats == 0) throw ConfigError("window_beats must be positive");
  const std::size_t K = probs.dim(0), N = probs.dim(1);
  if (K < window_beats) {
    throw DspError("insufficient beats: " + std::to_string(K) + " segments for a " + std::to_string(window_beats) +
                   "-beat window");
  }
  std::vector<std::vector<double>> out;
  for (std::size_t start = 0; start + window_beats <= K; start += window_beats) {
    std::vector<double> avg(N, 0.0);
    for (std::size_t k = start; k < start + window_beats; ++k)
      for (std::size_t j = 0; j < N; ++j) avg[j] += probs.at(k, j);
    for (auto& v : avg) v /= static_cast<double>(window_beats);
    out.push_back(std::move(avg));
  }
  return out;
}

std::vector<std::vector<double>> authenticate(const MorphModel& m, const STMap& input, std::size_t window_beats) {
  return window_scores(score_segments(m, input).probs, window_beats);
}

namespace {

struct ValScore {
  double eer = 1.0;
  double loss = std::numeric_limits<double>::infinity();
};

ValScore validate(const MorphModel& m, const std::vector<LabeledMap>& val, std::size_t window_beats, int n_rppg) {
  std::vector<ScoreRow> rows;
  double loss = 0.0;
  std::size_t counted = 0;
  for (const auto& v : val) {
    SegmentScores s;
    try {
      s = score_segments(m, v.input);
    } catch (const DspError&) {
      continue;
    }
    loss += ce_loss(s.probs, static_cast<std::size_t>(v.label));
    ++counted;
    if (s.probs.dim(0) < window_beats) continue;
    std::size_t w = 0;
    for (auto& sc : window_scores(s.probs, window_beats)) rows.push_back({v.label, std::move(sc), "val", w++});
  }
  ValScore out;
  if (counted > 0) out.loss = loss / static_cast<double>(counted);
  const auto rep = per_subject_eval(rows, n_rppg);
  if (!rep.per_subject.empty()) out.eer = rep.mean_eer;
  return out;
}

bool better(const ValScore& a, const ValScore& b) { return a.eer < b.eer || (a.eer == b.eer && a.loss < b.loss); }

// Clip bounds for a bandpassed signal, or an explanation of why none exist.
bool plan_segments(const RppgSignal& s, ClipPlan& plan, std::string& why) {
  try {
    plan = plan_clips(detect_peaks(s), s.fs);
  } catch (const DspError& e) {
    why = e.what();
    return false;
  }
  if (plan.starts.empty()) {
    why = "every clip longer than the 40 bpm limit";
    return false;
  }
  return true;
}

// k distinct indices from 0..n-1 (all of them, shuffled, when k >= n).
std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  const std::size_t take = std::min(k, n);
  for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(take);
  return idx;
}

Var mean_of(Tape& t, const std::vector<Var>& xs) {
  Var acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = ops::add(t, acc, xs[i]);
  return xs.size() == 1 ? acc : ops::scale(t, acc, 1.0 / static_cast<double>(xs.size()));
}

}  // namespace

Stage2Result train_stage2(const Stage2Data& data, const ParamStore& g_checkpoint, const Stage2Config& cfg) {
  if (g_checkpoint.subset("g/").size() == 0) throw ConfigError("stage-1 checkpoint holds no g/ parameters");
  if (data.n_rppg < 2 || data.train.empty()) throw ConfigError("stage 2 needs at least 2 rPPG identities");
  if (cfg.hybrid && (data.n_cppg < 2 || data.cppg.empty())) throw ConfigError("stage 2 needs at least 2 cPPG identities");
  if (cfg.steps < 0 || cfg.eval_every < 1) throw ConfigError("stage 2 steps must be >= 0 and eval cadence >= 1");
  if (cfg.batch < 1) throw ConfigError("stage 2 batch must be >= 1");

  MorphModel m;
  m.g = g_checkpoint.subset("g/");
  m.h = init_model_h(mix_seed(cfg.seed, fnv1a("init-h")));
  m.hr = init_head("hr/", static_cast<std::size_t>(data.n_rppg), mix_seed(cfg.seed, fnv1a("init-hr")));
  // The cPPG head exists in both modes so checkpoints share one layout.
  m.hc = init_head("hc/", static_cast<std::size_t>(std::max(data.n_cppg, 2)), mix_seed(cfg.seed, fnv1a("init-hc")));
  AdamState adam_g, adam_h, adam_hr, adam_hc;

  std::map<int, std::vector<std::size_t>> cppg_by_label;
  for (std::size_t i = 0; i < data.cppg.size(); ++i) cppg_by_label[data.cppg[i].label].push_back(i);
  std::vector<int> cppg_labels;
  for (const auto& [label, _] : cppg_by_label) cppg_labels.push_back(label);

  Rng rng_r(mix_seed(cfg.seed, fnv1a("stage2-rppg")));
  Rng rng_c(mix_seed(cfg.seed, fnv1a("stage2-cppg")));
  Stage2Result res;

  auto evaluate = [&](int step) {
    const ValScore v = validate(m, data.val, cfg.val_window_beats, data.n_rppg);
    res.log.push_back({step, "val", v.loss, v.eer, false, ""});
    if (step == 0 || better(v, ValScore{res.best_val_eer, res.best_val_loss})) {
      res.model = m;
      res.best_step = step;
      res.best_val_eer = v.eer;
      res.best_val_loss = v.loss;
    }
  };
  evaluate(0);

  for (int step = 1; step <= cfg.steps; ++step) {
    {
      UpdateAudit audit{step, "rppg", cfg.audit ? m.fingerprints() : std::array<std::uint64_t, 4>{}, {}};
      Tape t;
      std::vector<Var> losses;
      std::string why;
      for (std::size_t vi : sample_distinct(data.train.size(), cfg.batch, rng_r)) {
        const LabeledMap& lm = data.train[vi];
        const auto w = static_cast<std::size_t>(std::llround(cfg.window_s * lm.input.fps));
        if (lm.input.length() < w) throw ConfigError("training portion shorter than one window");
        const std::size_t t0 = rng_r.index(lm.input.length() - w + 1);
        Var mr = forward_g(t, m.g, t.constant(st_map_input(lm.input.slice(t0, w))));
        const double fs = lm.input.fps;
        Var sig = ops::apply_self_adjoint(t, ops::mean_axis(t, mr, 0),
                                          [fs](std::span<const double> x) { return bandpass_samples(x, fs); });
        ClipPlan plan;
        if (!plan_segments(RppgSignal{t.value(sig).values(), fs}, plan, why)) continue;
        Var seg = ops::zscore_rows(t, ops::resample_clips(t, sig, plan.starts, plan.ends, kSegmentLength));
        Var probs = forward_head(t, m.hr, "hr/", forward_h(t, m.h, seg));
        losses.push_back(ce_loss(t, probs, static_cast<std::size_t>(lm.label)));
      }
      if (losses.empty()) {
        res.log.push_back({step, "rppg", 0.0, 0.0, true, why});
      } else {
        Var loss = mean_of(t, losses);
        const GradBuffer gb = t.backward(loss);
        adam_step(m.g, t.param_grads(gb, m.g), cfg.lr, adam_g);
        adam_step(m.h, t.param_grads(gb, m.h), cfg.lr, adam_h);
        adam_step(m.hr, t.param_grads(gb, m.hr), cfg.lr, adam_hr);
        res.log.push_back({step, "rppg", t.value(loss).item(), 0.0, false, ""});
      }
      if (cfg.audit) {
        audit.after = m.fingerprints();
        res.audit.push_back(audit);
      }
    }
    if (cfg.hybrid) {
      UpdateAudit audit{step, "cppg", cfg.audit ? m.fingerprints() : std::array<std::uint64_t, 4>{}, {}};
      Tape t;
      std::vector<Var> losses;
      std::string why;
      for (std::size_t li : sample_distinct(cppg_labels.size(), cfg.batch, rng_c)) {
        const auto& members = cppg_by_label.at(cppg_labels[li]);
        const LabeledTrace& lt = data.cppg[members[rng_c.index(members.size())]];
        const auto w = static_cast<std::size_t>(std::llround(cfg.window_s * lt.signal.fs));
        if (lt.signal.samples.size() < w) throw ConfigError("cPPG trace shorter than one window");
        const std::size_t t0 = rng_c.index(lt.signal.samples.size() - w + 1);
        const RppgSignal win = bandpass(
            RppgSignal{{lt.signal.samples.begin() + static_cast<std::ptrdiff_t>(t0),
                        lt.signal.samples.begin() + static_cast<std::ptrdiff_t>(t0 + w)},
                       lt.signal.fs});
        ClipPlan plan;
        if (!plan_segments(win, plan, why)) continue;
        const SegmentBatch batch = segment_and_resample(win, detect_peaks(win));
        Var probs = forward_head(t, m.hc, "hc/", forward_h(t, m.h, t.constant(batch.segments)));
        losses.push_back(ce_loss(t, probs, static_cast<std::size_t>(lt.label)));
      }
      if (losses.empty()) {
        res.log.push_back({step, "cppg", 0.0, 0.0, true, why});
      } else {
        Var loss = mean_of(t, losses);
        const GradBuffer gb = t.backward(loss);
        adam_step(m.h, t.param_grads(gb, m.h), cfg.lr, adam_h);
        adam_step(m.hc, t.param_grads(gb, m.hc), cfg.lr, adam_hc);
        res.log.push_back({step, "cppg", t.value(loss).item(), 0.0, false, ""});
      }
      if (cfg.audit) {
        audit.after = m.fingerprints();
        res.audit.push_back(audit);
      }
    }
    if (step % cfg.eval_every == 0 || step == cfg.steps) evaluate(step);
  }
  return res;
}

}  // namespace rppgid
