// SPDX-License-Identifier: Apache-2.0
// tubelabel: pseudo-label generation, refinement and evaluation for videos.

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "tubelabel/tubelabel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tubelabel;

namespace {

struct Globals {
  std::optional<fs::path> config;
  std::optional<unsigned> workers;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool json_out = false;
};

PipelineConfig base_config(const Globals& g) {
  PipelineConfig cfg = g.config ? load_pipeline_config(*g.config) : PipelineConfig{};
  if (g.workers) cfg.workers = *g.workers;
  if (g.seed) cfg.synth.seed = *g.seed;
  if (g.force) cfg.force = true;
  return cfg;
}

// Flattens a JSON document into "path  value" rows.
void flatten_rows(const json& j, const std::string& prefix, std::vector<std::pair<std::string, std::string>>& rows) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      flatten_rows(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), rows);
    }
  } else if (j.is_array() && !j.empty() && (j.front().is_object() || j.front().is_array())) {
    for (std::size_t i = 0; i < j.size(); ++i) flatten_rows(j[i], prefix + "[" + std::to_string(i) + "]", rows);
  } else if (j.is_number_float()) {
    std::ostringstream s;
    s << std::setprecision(6) << j.get<double>();
    rows.emplace_back(prefix, s.str());
  } else {
    rows.emplace_back(prefix, j.dump());
  }
}

void emit(const json& report, const Globals& g) {
  if (g.json_out) {
    std::cout << report.dump(2) << '\n';
    return;
  }
  std::vector<std::pair<std::string, std::string>> rows;
  flatten_rows(report, "", rows);
  std::size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.first.size());
  for (const auto& [key, value] : rows) std::cout << std::left << std::setw(static_cast<int>(width) + 2) << key << value << '\n';
}

const ClipManifest& find_clip(const std::vector<ClipManifest>& clips, const std::string& id) {
  for (const auto& c : clips) {
    if (c.clip_id == id) return c;
  }
  throw Error(ErrorKind::SchemaError, "no clip '" + id + "' in manifest");
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidConfig, "expected a comma separated list of integers, got '" + text + "'");
    }
  }
  return out;
}

/// Maximum relative error between the analytic tube gradient and central
/// differences, over coordinates whose analytic gradient exceeds 1e-6.
json grad_check(const std::vector<Tensor<double>>& pred, const std::vector<LabelMap>& gt, double eps) {
  std::vector<Tensor<double>> work = pred;
  const auto analytic = tube_matching_loss(std::span<const Tensor<double>>(work), std::span<const LabelMap>(gt));
  double max_rel = 0.0;
  std::size_t checked = 0;
  for (std::size_t t = 0; t < work.size(); ++t) {
    for (std::size_t i = 0; i < work[t].size(); ++i) {
      const double g = analytic.grad[t].values()[i];
      if (std::abs(g) <= 1e-6) continue;
      const double saved = work[t].values()[i];
      work[t].values()[i] = saved + eps;
      const double up = tube_matching_loss(std::span<const Tensor<double>>(work), std::span<const LabelMap>(gt)).loss;
      work[t].values()[i] = saved - eps;
      const double down = tube_matching_loss(std::span<const Tensor<double>>(work), std::span<const LabelMap>(gt)).loss;
      work[t].values()[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      max_rel = std::max(max_rel, std::abs(numeric - g) / std::max(std::abs(g), std::abs(numeric)));
      ++checked;
    }
  }
  return {{"epsilon", eps}, {"coordinates", checked}, {"max_relative_error", max_rel}, {"pass", max_rel < 1e-4}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-guided pseudo labels for video segmentation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "TOML configuration file")->check(CLI::ExistingFile);
  app.add_option("--workers", g.workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", g.seed, "Synthetic data seed");
  app.add_flag("--force", g.force, "Rerun pipeline stages whose outputs exist");
  app.add_flag("--json", g.json_out, "Print reports as JSON instead of a table");

  // synth
  fs::path synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic clips and a manifest");
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();

  // warp
  fs::path warp_manifest, warp_out;
  std::string warp_clip;
  int warp_from = 0, warp_to = 0;
  std::optional<fs::path> warp_labels_dir;
  bool warp_labels_flag = false;
  auto* warp_cmd = app.add_subcommand("warp", "Warp one frame onto another and compute the occlusion mask");
  warp_cmd->add_option("--manifest", warp_manifest)->required()->check(CLI::ExistingFile);
  warp_cmd->add_option("--clip", warp_clip)->required();
  warp_cmd->add_option("--from", warp_from, "Target frame index")->required();
  warp_cmd->add_option("--to", warp_to, "Source frame index")->required();
  warp_cmd->add_flag("--labels", warp_labels_flag, "Warp label maps (ground truth unless --labels-dir)");
  warp_cmd->add_option("--labels-dir", warp_labels_dir, "Directory of label maps to warp");
  warp_cmd->add_option("--out", warp_out)->required();

  // aggregate
  fs::path agg_manifest, agg_out;
  std::optional<double> alpha_occ, th;
  auto* agg_cmd = app.add_subcommand("aggregate", "Temporally aggregate predictions");
  agg_cmd->add_option("--manifest", agg_manifest)->required()->check(CLI::ExistingFile);
  agg_cmd->add_option("--out", agg_out)->required();

  // gen
  fs::path gen_manifest, gen_out;
  std::optional<std::string> strategy;
  std::optional<double> alpha, beta, gamma, theta0, fixed_threshold;
  bool no_aggregate = false;
  auto* gen_cmd = app.add_subcommand("gen", "Generate pseudo labels");
  gen_cmd->add_option("--manifest", gen_manifest)->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen_out)->required();
  gen_cmd->add_option("--strategy", strategy, "fixed | class_balanced | instance_adaptive | clip_adaptive");
  gen_cmd->add_option("--alpha", alpha, "Proportion");
  gen_cmd->add_option("--beta", beta, "Momentum");
  gen_cmd->add_option("--gamma", gamma, "Decay");
  gen_cmd->add_option("--theta0", theta0, "Initial threshold");
  gen_cmd->add_option("--fixed-threshold", fixed_threshold, "Threshold for --strategy fixed");
  gen_cmd->add_flag("--no-aggregate", no_aggregate, "Skip temporal aggregation");

  for (auto* cmd : {agg_cmd, gen_cmd, warp_cmd}) {
    cmd->add_option("--alpha-occ", alpha_occ, "Occlusion sharpness");
    cmd->add_option("--th", th, "Occlusion threshold");
  }

  // refine
  fs::path ref_manifest, ref_labels, ref_out;
  std::optional<std::string> mode;
  std::optional<int> ref_offset;
  bool strict = false;
  auto* ref_cmd = app.add_subcommand("refine", "Refine pseudo labels by temporal consensus");
  ref_cmd->add_option("--manifest", ref_manifest)->required()->check(CLI::ExistingFile);
  ref_cmd->add_option("--labels", ref_labels)->required()->check(CLI::ExistingDirectory);
  ref_cmd->add_option("--mode", mode, "cutout | fillin");
  ref_cmd->add_flag("--strict-consensus", strict, "Drop labels that cannot be confirmed");
  ref_cmd->add_option("--reference-offset", ref_offset, "Reference frame offset (default -1)");
  ref_cmd->add_option("--alpha-occ", alpha_occ, "Occlusion sharpness");
  ref_cmd->add_option("--th", th, "Occlusion threshold");
  ref_cmd->add_option("--out", ref_out)->required();

  // eval
  fs::path eval_manifest;
  std::optional<fs::path> eval_preds, eval_report;
  std::string metric = "miou";
  std::optional<std::string> spans_text;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate label maps against ground truth");
  eval_cmd->add_option("--manifest", eval_manifest)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--preds", eval_preds, "Directory of label maps (default: argmax of the manifest predictions)");
  eval_cmd->add_option("--metric", metric)->check(CLI::IsMember({"miou", "pmiou", "vpq"}));
  eval_cmd->add_option("--spans", spans_text, "VPQ window spans, e.g. 1,2,3,4");
  eval_cmd->add_option("--report", eval_report, "Write the report as JSON");

  // loss
  fs::path loss_manifest;
  std::string loss_clip, loss_frames;
  std::optional<fs::path> loss_labels;
  bool do_grad_check = false;
  double grad_eps = 1e-4;
  auto* loss_cmd = app.add_subcommand("loss", "Tube matching loss and segmentation objective on one tube");
  loss_cmd->add_option("--manifest", loss_manifest)->required()->check(CLI::ExistingFile);
  loss_cmd->add_option("--clip", loss_clip)->required();
  loss_cmd->add_option("--frames", loss_frames, "Comma separated frame indices")->required();
  loss_cmd->add_option("--labels", loss_labels, "Pseudo-label directory for the objective (default: ground truth)");
  loss_cmd->add_flag("--grad-check", do_grad_check, "Compare the gradient against central differences");
  loss_cmd->add_option("--epsilon", grad_eps, "Finite-difference step");

  // pipeline
  std::optional<fs::path> pipe_out;
  auto* pipe_cmd = app.add_subcommand("pipeline", "synth -> aggregate -> gen -> refine -> eval");
  pipe_cmd->add_option("--out", pipe_out, "Run directory (overrides out_dir)");

  CLI11_PARSE(app, argc, argv);

  try {
    PipelineConfig cfg = base_config(g);
    if (alpha_occ) cfg.warp.alpha_occ = *alpha_occ;
    if (th) cfg.warp.th = *th;
    cfg.refine.warp = cfg.warp;
    const unsigned workers = cfg.workers;

    if (*synth_cmd) {
      const auto manifests = synth::generate(cfg.synth, synth_out, workers);
      std::size_t frames = 0;
      for (const auto& m : manifests) frames += m.frames.size();
      emit({{"clips", manifests.size()}, {"frames", frames}, {"manifest", (synth_out / "manifest.json").string()}}, g);
    } else if (*warp_cmd) {
      const auto manifests = load_manifest(warp_manifest);
      const auto clip = load_clip(find_clip(manifests, warp_clip));
      const int n = static_cast<int>(clip.frames.size());
      if (warp_from < 0 || warp_from >= n || warp_to < 0 || warp_to >= n) {
        throw Error(ErrorKind::SchemaError, "frame index out of range for clip of " + std::to_string(n) + " frames");
      }
      const auto& target = clip.frames[static_cast<std::size_t>(warp_from)];
      const auto& source = clip.frames[static_cast<std::size_t>(warp_to)];
      const auto it = target.flows.find(warp_to - warp_from);
      if (it == target.flows.end()) {
        throw Error(ErrorKind::MissingFile, "no flow from frame " + std::to_string(warp_from) + " to " + std::to_string(warp_to));
      }
      fs::create_directories(warp_out);
      const auto stem = std::to_string(warp_from) + "_from_" + std::to_string(warp_to);
      json report{{"clip", warp_clip}, {"from", warp_from}, {"to", warp_to}};
      if (warp_labels_flag || warp_labels_dir) {
        LabelMap src = warp_labels_dir ? npy::load_labels(*warp_labels_dir / warp_clip / frame_file("label", static_cast<std::size_t>(warp_to)))
                                       : (source.gt ? *source.gt : throw Error(ErrorKind::MissingFile, "frame has no ground truth"));
        const auto warped = warp_labels(src, it->second);
        npy::save_array(warp_out / ("labels_" + stem + ".npy"), warped.data);
        report["ignored"] = warped.data.size() - warped.labeled_count();
      } else {
        const auto warped = warp_soft(source.pred, it->second);
        npy::save_array(warp_out / ("pred_" + stem + ".npy"), warped.map.data);
      }
      const auto mask = occlusion_mask(target.image, source.image, it->second, cfg.warp.alpha_occ, cfg.warp.th);
      std::vector<std::uint16_t> mask16(mask.data.values().begin(), mask.data.values().end());
      npy::save_array(warp_out / ("mask_" + stem + ".npy"), Tensor<std::uint16_t>(mask.data.shape(), std::move(mask16)));
      npy::save_array(warp_out / ("soft_" + stem + ".npy"), mask.soft);
      std::size_t visible = 0;
      for (auto v : mask.data.values()) visible += v;
      report["visible_fraction"] = static_cast<double>(visible) / static_cast<double>(mask.data.size());
      emit(report, g);
    } else if (*agg_cmd) {
      const auto manifests = load_manifest(agg_manifest);
      const auto clips = load_clips(manifests, workers);
      fs::create_directories(agg_out);
      json report{{"clips", json::array()}};
      std::vector<double> mean_support(clips.size());
      parallel_for(clips.size(), workers, [&](std::size_t i) {
        const auto agg = aggregate_clip(clips[i], cfg.warp);
        write_aggregated(agg_out, agg);
        double s = 0.0, n = 0.0;
        for (const auto& t : agg.support) {
          for (auto v : t.values()) s += v;
          n += static_cast<double>(t.size());
        }
        mean_support[i] = s / n;
      });
      for (std::size_t i = 0; i < clips.size(); ++i) {
        report["clips"].push_back({{"clip_id", clips[i].clip_id}, {"mean_support", mean_support[i]}});
      }
      emit(report, g);
    } else if (*gen_cmd) {
      auto& p = cfg.pseudo;
      if (strategy) p.strategy = parse_strategy(*strategy);
      if (alpha) p.alpha = *alpha;
      if (beta) p.beta = *beta;
      if (gamma) p.gamma = *gamma;
      if (theta0) p.theta0 = *theta0;
      if (fixed_threshold) p.fixed_threshold = *fixed_threshold;
      if (no_aggregate) p.aggregate = false;
      const auto manifests = load_manifest(gen_manifest);
      const auto clips = load_clips(manifests, workers);
      const auto labels = generate_dataset_labels(clips, p, cfg.warp, workers);
      fs::create_directories(gen_out);
      write_label_dir(gen_out, manifests, labels.labels, workers);
      const auto report = report_json(labels, p);
      write_json(gen_out / "report.json", report);
      emit(report, g);
    } else if (*ref_cmd) {
      if (mode) cfg.refine.mode = parse_refine_mode(*mode);
      if (strict) cfg.refine.strict_consensus = true;
      if (ref_offset) cfg.refine.reference_offset = *ref_offset;
      const auto manifests = load_manifest(ref_manifest);
      const auto clips = load_clips(manifests, workers);
      const auto labels = read_label_dir(ref_labels, manifests, workers);
      std::vector<std::vector<LabelMap>> refined(clips.size());
      parallel_for(clips.size(), workers, [&](std::size_t i) { refined[i] = refine_clip(labels[i], clips[i], cfg.refine); });
      fs::create_directories(ref_out);
      write_label_dir(ref_out, manifests, refined, workers);
      std::size_t before = 0, after = 0;
      for (std::size_t c = 0; c < clips.size(); ++c) {
        for (std::size_t t = 0; t < labels[c].size(); ++t) {
          before += labels[c][t].labeled_count();
          after += refined[c][t].labeled_count();
        }
      }
      emit({{"mode", std::string(to_string(cfg.refine.mode))},
            {"strict_consensus", cfg.refine.strict_consensus},
            {"labeled_before", before},
            {"labeled_after", after}},
           g);
    } else if (*eval_cmd) {
      const auto spans = spans_text ? parse_int_list(*spans_text) : cfg.spans;
      const auto manifests = load_manifest(eval_manifest);
      const auto clips = load_clips(manifests, workers);
      const auto k = clips.empty() ? std::size_t{0} : static_cast<std::size_t>(clips.front().num_classes);
      const auto gts = ground_truth(clips);
      const auto preds = eval_preds ? read_label_dir(*eval_preds, manifests, workers) : prediction_argmax(clips);
      json report{{"metric", metric}};
      if (metric == "miou") {
        report["miou"] = miou_json(miou(flatten(preds), flatten(gts), k));
      } else if (metric == "pmiou") {
        const auto pm = p_miou(flatten(preds), flatten(gts), k);
        report["p_miou"] = miou_json(pm.miou);
        report["coverage"] = pm.coverage;
      } else {
        report["vpq"] = vpq_json(vpq_s(preds, gts, k, spans));
      }
      if (eval_report) write_json(*eval_report, report);
      emit(report, g);
    } else if (*loss_cmd) {
      const auto manifests = load_manifest(loss_manifest);
      const auto clip = load_clip(find_clip(manifests, loss_clip));
      const auto frames = parse_int_list(loss_frames);
      std::vector<SoftSegMap> preds;
      std::vector<LabelMap> gts, targets;
      for (int t : frames) {
        if (t < 0 || t >= static_cast<int>(clip.frames.size())) throw Error(ErrorKind::SchemaError, "frame " + std::to_string(t) + " out of range");
        const auto& f = clip.frames[static_cast<std::size_t>(t)];
        if (!f.gt) throw Error(ErrorKind::MissingFile, "frame " + std::to_string(t) + " has no ground truth");
        preds.push_back(f.pred);
        gts.push_back(*f.gt);
        targets.push_back(loss_labels ? npy::load_labels(*loss_labels / loss_clip / frame_file("label", static_cast<std::size_t>(t))) : *f.gt);
      }
      const auto tube = tube_matching_loss(TubePair{preds, gts});
      json per_frame_ce = json::array();
      for (std::size_t i = 0; i < preds.size(); ++i) {
        if (targets[i].labeled_count() == 0) {
          per_frame_ce.push_back(nullptr);
        } else {
          per_frame_ce.push_back(cross_entropy(preds[i], targets[i]));
        }
      }
      const auto objective = vst_objective(preds, targets, cfg.loss);
      json report{{"clip", loss_clip},
                  {"frames", frames},
                  {"tube_loss", tube.loss},
                  {"class_dice", tube.class_dice},
                  {"cross_entropy", per_frame_ce},
                  {"objective", {{"seg", objective.seg}, {"reg", objective.reg}, {"total", objective.total}}}};
      if (do_grad_check) {
        std::vector<Tensor<double>> pd;
        for (const auto& p : preds) {
          std::vector<double> v(p.data.values().begin(), p.data.values().end());
          pd.emplace_back(p.data.shape(), std::move(v));
        }
        report["grad_check"] = grad_check(pd, gts, grad_eps);
      }
      emit(report, g);
    } else if (*pipe_cmd) {
      if (pipe_out) cfg.out_dir = *pipe_out;
      const auto result = run_pipeline(cfg);
      json report = json::parse(read_file(result.summary_path));
      report["summary"] = result.summary_path.string();
      emit(report, g);
    }
  } catch (const Error& e) {
    const json diag{{"error", std::string(to_string(e.kind()))}, {"message", e.what()}};
    std::cerr << diag.dump() << '\n';
    return 2;
  } catch (const std::exception& e) {
    const json diag{{"error", "Internal"}, {"message", e.what()}};
    std::cerr << diag.dump() << '\n';
    return 3;
  }
  return 0;
}
