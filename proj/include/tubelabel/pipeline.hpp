// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_PIPELINE_HPP
#define TUBELABEL_PIPELINE_HPP

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"

#include "tubelabel/aggregate.hpp"
#include "tubelabel/config.hpp"
#include "tubelabel/dataset.hpp"
#include "tubelabel/error.hpp"
#include "tubelabel/manifest.hpp"
#include "tubelabel/metrics.hpp"
#include "tubelabel/npy.hpp"
#include "tubelabel/pseudo.hpp"
#include "tubelabel/refine.hpp"
#include "tubelabel/synth.hpp"

namespace tubelabel {

/// Incremental SHA-256 over OpenSSL's EVP interface.
class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw Error(ErrorKind::IoError, "SHA-256 initialisation failed");
    }
  }

  void update(std::string_view bytes) { EVP_DigestUpdate(ctx_.get(), bytes.data(), bytes.size()); }

  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), digest, &len);
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return out.str();
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Hash of every `.npy` / `.json` file under `dir` (relative path + bytes),
/// visited in sorted path order. The stage stamp is excluded.
inline std::string hash_directory(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension();
    if ((ext == ".npy" || ext == ".json") && entry.path().filename() != "stage.json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  Sha256 sha;
  for (const auto& f : files) {
    const auto rel = fs::relative(f, dir).generic_string();
    sha.update(rel);
    sha.update(std::string_view("\0", 1));
    sha.update(read_file(f));
  }
  return sha.hex();
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline nlohmann::json optional_array(const std::vector<std::optional<double>>& v) {
  auto arr = nlohmann::json::array();
  for (const auto& x : v) {
    if (x) {
      arr.push_back(*x);
    } else {
      arr.push_back(nullptr);
    }
  }
  return arr;
}

inline nlohmann::json miou_json(const MiouResult& r) { return {{"per_class", optional_array(r.per_class)}, {"mean", r.mean}}; }

inline nlohmann::json vpq_json(const VpqResult& r) {
  nlohmann::json per_span = nlohmann::json::array();
  for (std::size_t i = 0; i < r.spans.size(); ++i) {
    per_span.push_back({{"span", r.spans[i]}, {"vpq", r.per_span[i]}, {"per_class", optional_array(r.per_span_class[i])}});
  }
  return {{"per_span", per_span}, {"mean", r.mean}};
}

/// Writes aggregated maps and support counts as
/// `<dir>/<clip_id>/agg_<ttt>.npy` and `support_<ttt>.npy`.
inline void write_aggregated(const fs::path& dir, const AggregatedClip& agg) {
  const fs::path clip_dir = dir / agg.clip_id;
  fs::create_directories(clip_dir);
  for (std::size_t t = 0; t < agg.frames.size(); ++t) {
    npy::save_array(clip_dir / frame_file("agg", t), agg.frames[t].data);
    npy::save_array(clip_dir / frame_file("support", t), agg.support[t]);
  }
}

struct StageRecord {
  std::string name;
  bool skipped = false;
  double seconds = 0.0;
  std::string sha256;
};

struct PipelineResult {
  std::vector<StageRecord> stages;
  nlohmann::json metrics;
  fs::path summary_path;
};

/// Evaluation report shared by the pipeline and `tubelabel eval`.
inline nlohmann::json evaluate_labels(std::span<const std::vector<LabelMap>> labels, std::span<const std::vector<LabelMap>> gts,
                                      std::size_t k, const std::vector<int>& spans) {
  std::vector<std::vector<LabelMap>> lab(labels.begin(), labels.end()), gt(gts.begin(), gts.end());
  const auto flat_l = flatten(lab), flat_g = flatten(gt);
  nlohmann::json j;
  try {
    const auto pm = p_miou(flat_l, flat_g, k);
    j["p_miou"] = miou_json(pm.miou);
    j["coverage"] = pm.coverage;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::EmptyEvaluation) throw;
    j["p_miou"] = nullptr;
    j["coverage"] = 0.0;
  }
  j["vpq"] = vpq_json(vpq_s(labels, gts, k, spans));
  return j;
}

namespace detail {

class StageRunner {
 public:
  StageRunner(const PipelineConfig& cfg, std::vector<StageRecord>& records) : cfg_(cfg), records_(records) {}

  /// Runs `body(dir)` unless `dir/stage.json` already exists; either way
  /// records the stage hash.
  void run(const std::string& name, const fs::path& dir, const std::function<void(const fs::path&)>& body) {
    const auto stamp = dir / "stage.json";
    StageRecord rec{name, false, 0.0, {}};
    if (cfg_.force && fs::exists(dir)) fs::remove_all(dir);
    if (fs::exists(stamp)) {
      rec.skipped = true;
    } else {
      if (fs::exists(dir)) fs::remove_all(dir);
      fs::create_directories(dir);
      const auto start = std::chrono::steady_clock::now();
      try {
        body(dir);
      } catch (const Error& e) {
        throw Error(e.kind(), "stage '" + name + "': " + e.what());
      }
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      write_json(stamp, {{"stage", name}});
    }
    rec.sha256 = hash_directory(dir);
    records_.push_back(rec);
  }

 private:
  const PipelineConfig& cfg_;
  std::vector<StageRecord>& records_;
};

}  // namespace detail

/// synth -> aggregate -> gen -> refine -> eval. Each stage writes into its
/// own directory under `out_dir` and is skipped when its stamp exists,
/// unless `force` is set. Writes `summary.json`.
inline PipelineResult run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  PipelineResult result;
  const fs::path out = fs::absolute(cfg.out_dir);
  fs::create_directories(out);
  detail::StageRunner stages(cfg, result.stages);
  const unsigned workers = cfg.workers;

  fs::path manifest_path;
  if (cfg.manifest) {
    manifest_path = fs::absolute(*cfg.manifest);
  } else {
    stages.run("synth", out / "synth", [&](const fs::path& dir) { synth::generate(cfg.synth, dir, workers); });
    manifest_path = out / "synth" / "manifest.json";
  }
  const auto manifests = load_manifest(manifest_path);
  const auto clips = load_clips(manifests, workers);
  const std::size_t k = clips.empty() ? 0 : static_cast<std::size_t>(clips.front().num_classes);

  stages.run("aggregate", out / "aggregate", [&](const fs::path& dir) {
    parallel_for(clips.size(), workers, [&](std::size_t i) { write_aggregated(dir, aggregate_clip(clips[i], cfg.warp)); });
  });

  stages.run("gen", out / "labels", [&](const fs::path& dir) {
    const auto labels = generate_dataset_labels(clips, cfg.pseudo, cfg.warp, workers);
    write_label_dir(dir, manifests, labels.labels, workers);
    write_json(dir / "report.json", report_json(labels, cfg.pseudo));
  });

  RefineParams refine = cfg.refine;
  refine.warp = cfg.warp;
  stages.run("refine", out / "refined", [&](const fs::path& dir) {
    const auto labels = read_label_dir(out / "labels", manifests, workers);
    std::vector<std::vector<LabelMap>> refined(clips.size());
    parallel_for(clips.size(), workers, [&](std::size_t i) { refined[i] = refine_clip(labels[i], clips[i], refine); });
    write_label_dir(dir, manifests, refined, workers);
  });

  stages.run("eval", out / "eval", [&](const fs::path& dir) {
    const auto gts = ground_truth(clips);
    const auto preds = prediction_argmax(clips);
    const auto labels = read_label_dir(out / "labels", manifests, workers);
    const auto refined = read_label_dir(out / "refined", manifests, workers);
    nlohmann::json report;
    report["predictions"] = {{"miou", miou_json(miou(flatten(preds), flatten(gts), k))},
                             {"vpq", vpq_json(vpq_s(preds, gts, k, cfg.spans))}};
    report["pseudo_labels"] = evaluate_labels(labels, gts, k, cfg.spans);
    report["refined_labels"] = evaluate_labels(refined, gts, k, cfg.spans);
    write_json(dir / "report.json", report);
  });

  result.metrics = nlohmann::json::parse(read_file(out / "eval" / "report.json"));
  nlohmann::json summary;
  summary["stages"] = nlohmann::json::array();
  for (const auto& s : result.stages) {
    summary["stages"].push_back({{"name", s.name}, {"skipped", s.skipped}, {"seconds", s.seconds}, {"sha256", s.sha256}});
  }
  summary["final_metrics"] = result.metrics;
  result.summary_path = out / "summary.json";
  write_json(result.summary_path, summary);
  return result;
}

}  // namespace tubelabel

#endif  // TUBELABEL_PIPELINE_HPP
