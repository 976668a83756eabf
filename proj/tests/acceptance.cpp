// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "oracle/oracle.hpp"
#include "tubelabel/tubelabel.hpp"

using namespace tubelabel;
using namespace testing_support;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// 1. Analytic tube-loss gradient against central differences.
Outcome gradient_correctness() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(1);
  const std::size_t ks[] = {2, 3, 5};
  double worst = 0.0;
  std::size_t coords = 0;
  const int tubes = 120;
  for (int i = 0; i < tubes; ++i) {
    const std::size_t k = ks[i % 3];
    std::vector<Tensor<double>> pred;
    std::vector<LabelMap> gt;
    for (int f = 0; f < 2; ++f) {
      const auto p = random_softseg(rng, k, 6, 6);
      pred.emplace_back(p.data.shape(), std::vector<double>(p.data.values().begin(), p.data.values().end()));
      gt.push_back(random_labels(rng, k, 6, 6, 0.1));
    }
    const auto r = tube_matching_loss(std::span<const Tensor<double>>(pred), std::span<const LabelMap>(gt));
    const double eps = 1e-4;
    for (std::size_t f = 0; f < 2; ++f) {
      for (std::size_t j = 0; j < pred[f].size(); ++j) {
        const double g = r.grad[f][j];
        if (std::abs(g) <= 1e-6) continue;
        const double v = pred[f][j];
        pred[f][j] = v + eps;
        const double up = oracle::oracle_tube_loss(pred, gt);
        pred[f][j] = v - eps;
        const double down = oracle::oracle_tube_loss(pred, gt);
        pred[f][j] = v;
        worst = std::max(worst, std::abs((up - down) / (2 * eps) - g) / std::abs(g));
        ++coords;
      }
    }
  }
  const double t = seconds_since(start);
  return {worst < 1e-4 && t < 10.0, std::to_string(tubes) + " tubes, " + std::to_string(coords) +
                                        " coords, max rel err " + fmt(worst) + ", " + fmt(t, 3) + " s"};
}

// 2. Clip-adaptive labels and thresholds against the reference loop.
Outcome algorithm_equivalence() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(2);
  int clips_checked = 0;
  bool labels_ok = true;
  double theta_err = 0.0;
  for (int seq = 0; seq < 25; ++seq) {
    const auto k = static_cast<std::size_t>(uniform_int(rng, 2, 5));
    const auto h = static_cast<std::size_t>(uniform_int(rng, 1, 16)), w = static_cast<std::size_t>(uniform_int(rng, 1, 16));
    PseudoConfig cfg;
    cfg.alpha = uniform(rng, 0.05, 1.0);
    cfg.beta = uniform(rng, 0.0, 0.99);
    cfg.gamma = uniform(rng, 0.0, 3.0);
    cfg.theta0 = uniform(rng, 0.1, 1.0);
    std::vector<std::vector<SoftSegMap>> clips(static_cast<std::size_t>(uniform_int(rng, 2, 4)));
    for (auto& c : clips) {
      for (int f = 0, n = uniform_int(rng, 1, 4); f < n; ++f) c.push_back(random_softseg(rng, k, h, w, 3.0));
    }
    const auto ref = oracle::oracle_alg1(clips, cfg.theta0, cfg.alpha, cfg.beta, cfg.gamma);
    auto state = ThresholdState::initial(k, cfg.theta0);
    for (std::size_t i = 0; i < clips.size(); ++i) {
      auto step = generate_clip_labels(clips[i], state, cfg);
      state = step.state;
      labels_ok = labels_ok && step.labels == ref.labels[i];
      for (std::size_t c = 0; c < k; ++c) theta_err = std::max(theta_err, std::abs(state.theta[c] - ref.theta_trace[i][c]));
      ++clips_checked;
    }
  }
  const double t = seconds_since(start);
  return {labels_ok && theta_err <= 1e-9 && clips_checked >= 50 && t < 10.0,
          std::to_string(clips_checked) + " clips, labels " + (labels_ok ? "identical" : "DIFFER") + ", max theta err " +
              fmt(theta_err) + ", " + fmt(t, 3) + " s"};
}

// 3. Bilinear warp against the tent-kernel oracle; occlusion closed form.
Outcome warp_equivalence() {
  Rng rng(3);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto h = static_cast<std::size_t>(uniform_int(rng, 1, 16)), w = static_cast<std::size_t>(uniform_int(rng, 1, 16));
    const auto src = random_softseg(rng, static_cast<std::size_t>(uniform_int(rng, 1, 5)), h, w);
    const auto flow = random_flow(rng, h, w, 4.0);
    const auto out = warp_soft(src, flow);
    const auto ref = oracle::oracle_bilinear(oracle::to_volume(src.data), flow);
    for (std::size_t c = 0; c < src.num_classes(); ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) worst = std::max(worst, std::abs(out.map.data(c, y, x) - ref.values[c][y][x]));
      }
    }
  }
  ImageFrame zero{Tensor<float>(Shape{3, 4, 4}, 0.0f)}, one{Tensor<float>(Shape{3, 4, 4}, 1.0f)};
  const auto m = occlusion_mask(zero, one, FlowField::constant(4, 4, 0, 0), 1.0, 0.7);
  double occ_err = 0.0;
  for (auto v : m.soft.values()) occ_err = std::max(occ_err, std::abs(v - std::exp(-std::sqrt(3.0))));
  return {worst < 1e-6 && occ_err <= 1e-6,
          "100 warps, max abs err " + fmt(worst) + "; occlusion |O - exp(-sqrt 3)| = " + fmt(occ_err)};
}

// 4. mIoU and VPQ^s against set-based oracles; perfect prediction.
Outcome metric_equivalence() {
  Rng rng(4);
  double miou_err = 0.0, vpq_err = 0.0;
  int instances = 0;
  for (int i = 0; i < 60; ++i) {
    const auto k = static_cast<std::size_t>(uniform_int(rng, 2, 5));
    const auto h = static_cast<std::size_t>(uniform_int(rng, 2, 16)), w = static_cast<std::size_t>(uniform_int(rng, 2, 16));
    const auto nclips = static_cast<std::size_t>(uniform_int(rng, 1, 4));
    const int frames = uniform_int(rng, 1, 4);
    std::vector<std::vector<LabelMap>> p(nclips), g(nclips);
    for (std::size_t c = 0; c < nclips; ++c) {
      for (int f = 0; f < frames; ++f) {
        g[c].push_back(random_labels(rng, k, h, w, 0.1));
        auto q = g[c].back();
        for (auto& v : q.data.values()) {
          if (uniform(rng) < 0.3) v = static_cast<std::uint16_t>(uniform_int(rng, 0, static_cast<int>(k) - 1));
        }
        p[c].push_back(q);
      }
    }
    std::vector<int> spans;
    for (int s = 1; s <= frames; ++s) spans.push_back(s);
    const auto fp = flatten(p), fg = flatten(g);
    const auto m = miou(fp, fg, k);
    const auto mo = oracle::oracle_miou(fp, fg, k);
    miou_err = std::max(miou_err, std::abs(m.mean - mo.mean));
    for (std::size_t c = 0; c < k; ++c) {
      if (m.per_class[c]) miou_err = std::max(miou_err, std::abs(*m.per_class[c] - mo.per_class[c]));
    }
    const auto v = vpq_s(std::span<const std::vector<LabelMap>>(p), std::span<const std::vector<LabelMap>>(g), k, spans);
    const auto vo = oracle::oracle_vpq(p, g, k, spans);
    for (std::size_t s = 0; s < spans.size(); ++s) vpq_err = std::max(vpq_err, std::abs(v.per_span[s] - vo.per_span[s]));
    ++instances;
  }
  std::vector<LabelMap> perfect;
  for (int f = 0; f < 4; ++f) perfect.push_back(random_labels(rng, 5, 16, 16, 0.05));
  const double perfect_miou = 100.0 * miou(perfect, perfect, 5).mean;
  const auto pv = vpq_s(std::span<const LabelMap>(perfect), std::span<const LabelMap>(perfect), 5, {1, 2, 3, 4});
  bool all_hundred = true;
  for (double s : pv.per_span) all_hundred = all_hundred && s == 100.0;
  return {miou_err <= 1e-12 && vpq_err <= 1e-9 && perfect_miou == 100.0 && all_hundred,
          std::to_string(instances) + " instances, max mIoU err " + fmt(miou_err) + ", max VPQ err " + fmt(vpq_err) +
              "; perfect: mIoU " + fmt(perfect_miou) + "%, VPQ spans 1-4 " + (all_hundred ? "all 100%" : "NOT 100%")};
}

// 5. Same per-frame errors, arranged differently in time.
Outcome temporal_sensitivity() {
  synth::SynthConfig cfg;
  cfg.seed = 5;
  cfg.frames_per_clip = 6;
  cfg.height = cfg.width = 32;
  cfg.num_classes = 4;
  cfg.shape_count = 2;
  cfg.velocity_range = 0;  // static scene: every frame has the same ground truth
  cfg.noise.softmax_temperature = 0.05;
  const auto clip = synth::render_clip(cfg, 0);
  const std::size_t n = clip.data.frames.size();
  const std::size_t k = 4;
  std::vector<LabelMap> gts, a, b;
  for (const auto& f : clip.data.frames) gts.push_back(*f.gt);
  // The flickered frame: shape 0's visible pixels take the next class.
  LabelMap flicker = gts[0];
  for (std::size_t i = 0; i < flicker.data.size(); ++i) {
    if (clip.layers[0].values()[i] == 1) flicker.data[i] = static_cast<std::uint16_t>((clip.shapes[0].cls + 1) % k);
  }
  a = gts;
  b = gts;
  a[1] = a[3] = flicker;  // isolated flickers
  b[2] = b[3] = flicker;  // consecutive flickers
  // Per-frame confusion matrices, as a multiset over frames.
  auto matrices = [&](const std::vector<LabelMap>& v) {
    std::vector<std::vector<std::uint64_t>> out;
    for (std::size_t t = 0; t < n; ++t) {
      ConfusionMatrix cm(k);
      cm.add(v[t], gts[t]);
      out.push_back(cm.counts);
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  const bool same_matrices = matrices(a) == matrices(b);
  const double miou_diff = std::abs(miou(a, gts, k).mean - miou(b, gts, k).mean) * 100.0;
  const auto va = vpq_s(std::span<const LabelMap>(a), std::span<const LabelMap>(gts), k, {1, 2, 3, 4});
  const auto vb = vpq_s(std::span<const LabelMap>(b), std::span<const LabelMap>(gts), k, {1, 2, 3, 4});
  std::string per_span;
  double span2 = 0.0;
  for (std::size_t s = 0; s < va.spans.size(); ++s) {
    const double d = std::abs(va.per_span[s] - vb.per_span[s]);
    if (va.spans[s] == 2) span2 = d;
    per_span += " w=" + std::to_string(va.spans[s]) + ":" + fmt(d, 3);
  }
  return {same_matrices && miou_diff == 0.0 && span2 > 5.0,
          std::string("per-frame confusion matrices ") + (same_matrices ? "identical" : "DIFFER") +
              " (as a multiset over frames), mIoU diff " + fmt(miou_diff) + " pts, VPQ diff" + per_span + " pts"};
}

// Shared setup for criteria 6-8.
std::vector<ClipData> render_dataset(const synth::SynthConfig& cfg) {
  std::vector<ClipData> clips;
  for (int c = 0; c < cfg.num_clips; ++c) clips.push_back(synth::render_clip(cfg, c).data);
  return clips;
}

struct Scored {
  double alpha = 0.0, coverage = 0.0, p_miou = 0.0;
};

/// Calibrates alpha so the labels' coverage hits `target`, then scores them.
Scored score_at_coverage(const std::vector<ClipData>& clips, const std::vector<std::vector<LabelMap>>& gts, PseudoConfig cfg,
                         double target) {
  const auto flat_gt = flatten(gts);
  auto run = [&](double alpha) {
    cfg.alpha = alpha;
    const auto labels = generate_dataset_labels(clips, cfg, WarpParams{});
    return p_miou(flatten(labels.labels), flat_gt, static_cast<std::size_t>(clips.front().num_classes));
  };
  const auto cal = calibrate_alpha([&](double a) { return run(a).coverage; }, target);
  const auto r = run(cal.alpha);
  return {cal.alpha, r.coverage, r.miou.mean};
}

double max_coverage(const std::vector<ClipData>& clips, const std::vector<std::vector<LabelMap>>& gts, PseudoConfig cfg) {
  cfg.alpha = 1.0;
  const auto labels = generate_dataset_labels(clips, cfg, WarpParams{});
  return p_miou(flatten(labels.labels), flatten(gts), static_cast<std::size_t>(clips.front().num_classes)).coverage;
}

struct Comparison {
  int wins = 0;
  bool matched = true;
  std::string detail;
};

/// Scores `better` against `baseline` on five seeds at a matched coverage.
Comparison compare_strategies(synth::SynthConfig scfg, const PseudoConfig& better, const PseudoConfig& baseline,
                              bool strict) {
  Comparison out;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    scfg.seed = 1000 + seed;
    const auto clips = render_dataset(scfg);
    const auto gts = ground_truth(clips);
    const double target = 0.7 * std::min(max_coverage(clips, gts, better), max_coverage(clips, gts, baseline));
    const auto a = score_at_coverage(clips, gts, better, target);
    const auto b = score_at_coverage(clips, gts, baseline, target);
    const bool matched = std::abs(a.coverage - b.coverage) <= 0.02;
    out.matched = out.matched && matched;
    const bool win = matched && (strict ? a.p_miou > b.p_miou : a.p_miou >= b.p_miou);
    out.wins += win;
    out.detail += " [seed " + std::to_string(seed) + ": " + fmt(100 * a.p_miou) + " vs " + fmt(100 * b.p_miou) + " @cov " +
                  fmt(a.coverage, 3) + "/" + fmt(b.coverage, 3) + "]";
  }
  return out;
}

PseudoConfig clip_adaptive(bool aggregate) {
  PseudoConfig cfg;
  cfg.strategy = Strategy::ClipAdaptive;
  cfg.aggregate = aggregate;
  cfg.beta = 0.5;
  return cfg;
}

// 6. Aggregated vs raw predictions for clip-adaptive labels.
Outcome aggregation_benefit() {
  synth::SynthConfig scfg;
  scfg.num_clips = 4;
  scfg.frames_per_clip = 5;
  scfg.height = scfg.width = 32;
  scfg.num_classes = 5;
  scfg.noise.label_flip_prob = 0.2;
  scfg.noise.softmax_temperature = 0.3;
  scfg.noise.confidence_jitter = 0.5;
  const auto c = compare_strategies(scfg, clip_adaptive(true), clip_adaptive(false), true);
  return {c.wins >= 4, std::to_string(c.wins) + "/5 seeds aggregated > raw P-mIoU" + c.detail};
}

// 7. Cut-out vs fill-in refinement on flickered data. Decided on un-aggregated
// labels: aggregation already removes most flicker, leaving cut-out little to do.
// The aggregated ordering is printed alongside for reference.
Outcome refinement_ordering() {
  synth::SynthConfig scfg;
  scfg.num_clips = 4;
  scfg.frames_per_clip = 5;
  scfg.height = scfg.width = 32;
  scfg.num_classes = 5;
  scfg.noise.flicker_prob = 0.3;
  scfg.noise.softmax_temperature = 0.3;
  scfg.noise.confidence_jitter = 0.5;
  int wins = 0, aggregated_wins = 0;
  std::size_t violations = 0, frames = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    scfg.seed = 2000 + seed;
    const auto clips = render_dataset(scfg);
    const auto gts = ground_truth(clips);
    for (bool aggregate : {false, true}) {
      const auto labels = generate_dataset_labels(clips, clip_adaptive(aggregate), WarpParams{});
      std::vector<std::vector<LabelMap>> cut(clips.size()), fill(clips.size());
      RefineParams cp, fp;
      fp.mode = RefineMode::FillIn;
      for (std::size_t i = 0; i < clips.size(); ++i) {
        cut[i] = refine_clip(labels.labels[i], clips[i], cp);
        fill[i] = refine_clip(labels.labels[i], clips[i], fp);
        for (std::size_t t = 0; t < cut[i].size(); ++t) {
          ++frames;
          violations += cut[i][t].labeled_count() > labels.labels[i][t].labeled_count();
        }
      }
      const auto pc = p_miou(flatten(cut), flatten(gts), 5), pf = p_miou(flatten(fill), flatten(gts), 5);
      const bool win = pc.miou.mean >= pf.miou.mean;
      if (aggregate) {
        aggregated_wins += win;
        continue;
      }
      wins += win;
      detail += " [seed " + std::to_string(seed) + ": " + fmt(100 * pc.miou.mean) + " vs " + fmt(100 * pf.miou.mean) + "]";
    }
  }
  return {wins >= 4 && violations == 0, std::to_string(wins) + "/5 seeds cut-out >= fill-in P-mIoU (raw labels), " +
                                            std::to_string(violations) + " count violations over " + std::to_string(frames) +
                                            " frames" + detail + "; aggregated labels: " + std::to_string(aggregated_wins) +
                                            "/5"};
}

// 8. Clip-adaptive vs instance-adaptive under spatially correlated noise.
Outcome strategy_ordering() {
  synth::SynthConfig scfg;
  scfg.num_clips = 4;
  scfg.frames_per_clip = 5;
  scfg.height = scfg.width = 32;
  scfg.num_classes = 5;
  scfg.noise.label_flip_prob = 0.2;
  scfg.noise.noise_cell = 4;
  scfg.noise.softmax_temperature = 0.3;
  scfg.noise.confidence_jitter = 0.5;
  PseudoConfig ia;
  ia.strategy = Strategy::InstanceAdaptive;
  ia.beta = 0.5;
  const auto c = compare_strategies(scfg, clip_adaptive(true), ia, false);
  return {c.wins >= 4, std::to_string(c.wins) + "/5 seeds clip_adaptive >= instance_adaptive P-mIoU" + c.detail};
}

// 9. End-to-end hashes from the CLI with different worker counts.
Outcome determinism() {
  TempDir tmp("tl_accept");
  {
    std::ofstream(tmp / "run.toml") << "seed = 9\n[synth]\nnum_clips = 3\nframes_per_clip = 4\nheight = 24\nwidth = 24\n"
                                       "[synth.noise]\nlabel_flip_prob = 0.1\nflicker_prob = 0.2\nsoftmax_temperature = 0.3\n"
                                       "confidence_jitter = 0.5\nnoise_cell = 2\n";
  }
  auto run = [&](int workers, const std::string& out) {
    const std::string cmd = std::string(TUBELABEL_CLI) + " --config " + (tmp / "run.toml").string() + " --workers " +
                            std::to_string(workers) + " pipeline --out " + (tmp / out).string() + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) && WEXITSTATUS(status) == 0;
  };
  if (!run(1, "a") || !run(4, "b")) return {false, "pipeline exited nonzero"};
  const auto sa = nlohmann::json::parse(read_file(tmp / "a" / "summary.json"));
  const auto sb = nlohmann::json::parse(read_file(tmp / "b" / "summary.json"));
  bool same = sa["stages"].size() == sb["stages"].size() && !sa["stages"].empty();
  for (std::size_t i = 0; same && i < sa["stages"].size(); ++i) same = sa["stages"][i]["sha256"] == sb["stages"][i]["sha256"];
  return {same, std::to_string(sa["stages"].size()) + " stage hashes " + (same ? "identical" : "DIFFER") +
                    " for --workers 1 vs 4"};
}

// 10. The randomized invariant suite.
Outcome invariant_suite() {
  const auto log = fs::temp_directory_path() / ("tl_props_" + std::to_string(::getpid()) + ".xml");
  const std::string cmd = std::string(TUBELABEL_PROPERTIES) + " --gtest_output=xml:" + log.string() + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  const bool ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
  std::string text = fs::exists(log) ? read_file(log) : "";
  fs::remove(log);
  auto attr = [&](const std::string& name) {
    const auto at = text.find(name + "=\"");
    if (at == std::string::npos) return std::string("?");
    const auto begin = at + name.size() + 2;
    return text.substr(begin, text.find('"', begin) - begin);
  };
  return {ok, attr("tests") + " properties x 1000 cases, " + attr("failures") + " failures"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"clip-adaptive oracle equivalence", algorithm_equivalence},
      {"warp/occlusion oracle equivalence", warp_equivalence},
      {"metric oracle equivalence", metric_equivalence},
      {"temporal-consistency sensitivity", temporal_sensitivity},
      {"aggregation benefit", aggregation_benefit},
      {"refinement ordering", refinement_ordering},
      {"threshold-strategy ordering", strategy_ordering},
      {"determinism", determinism},
      {"invariant suite", invariant_suite},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
