// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "common.hpp"
#include "oracle/oracle.hpp"
#include "tubelabel/dataset.hpp"
#include "tubelabel/metrics.hpp"
#include "tubelabel/refine.hpp"
#include "tubelabel/synth.hpp"

using namespace tubelabel;
using namespace testing_support;

namespace {

LabelMap row(std::vector<std::uint16_t> v) {
  LabelMap m(1, v.size(), 0);
  for (std::size_t i = 0; i < v.size(); ++i) m(0, i) = v[i];
  return m;
}

OcclusionMask mask_of(std::vector<std::uint8_t> v) {
  OcclusionMask m;
  const std::size_t n = v.size();
  m.data = Tensor<std::uint8_t>(Shape{1, n}, std::move(v));
  m.soft = Tensor<float>(Shape{1, m.data.size()}, 1.0f);
  m.out_of_bounds = Tensor<std::uint8_t>(Shape{1, m.data.size()}, 0);
  return m;
}

std::vector<std::vector<bool>> visible_of(const OcclusionMask& m) {
  std::vector<std::vector<bool>> v(m.data.dim(0), std::vector<bool>(m.data.dim(1)));
  for (std::size_t y = 0; y < m.data.dim(0); ++y) {
    for (std::size_t x = 0; x < m.data.dim(1); ++x) v[y][x] = m(y, x) != 0;
  }
  return v;
}

}  // namespace

TEST(CutOut, CaseTable) {
  // agree, disagree, ref ignored, occluded, current ignored
  const auto cur = row({1, 1, 2, 0, kIgnore});
  const auto ref = row({1, 2, kIgnore, 3, 1});
  const auto mask = mask_of({1, 1, 1, 0, 1});
  const auto flow = FlowField::constant(1, 5, 0, 0);
  EXPECT_EQ(refine_cutout(cur, ref, flow, mask), row({1, kIgnore, 2, 0, kIgnore}));
  EXPECT_EQ(refine_cutout(cur, ref, flow, mask, true), row({1, kIgnore, kIgnore, kIgnore, kIgnore}));
}

TEST(FillIn, CaseTable) {
  const auto cur = row({1, kIgnore, kIgnore, kIgnore, 0});
  const auto ref = row({2, 3, kIgnore, 3, 1});
  const auto mask = mask_of({1, 1, 1, 0, 1});
  const auto flow = FlowField::constant(1, 5, 0, 0);
  EXPECT_EQ(refine_fillin(cur, ref, flow, mask), row({1, 3, kIgnore, kIgnore, 0}));
}

TEST(CutOut, ReferenceIsWarpedBeforeComparison) {
  const auto cur = row({1, 2, 3, 4});
  const auto ref = row({0, 1, 2, 3});
  const auto flow = FlowField::constant(1, 4, 1.0f, 0.0f);  // pixel x reads reference x + 1
  const auto mask = mask_of({1, 1, 1, 1});
  EXPECT_EQ(refine_cutout(cur, ref, flow, mask), row({1, 2, 3, 4}));
  EXPECT_EQ(refine_cutout(cur, ref, flow, mask, true), row({1, 2, 3, kIgnore}));
}

TEST(Refine, MatchesCaseAnalysisOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t h = 6, w = 7;
    const auto cur = random_labels(rng, 3, h, w, 0.3);
    const auto ref = random_labels(rng, 3, h, w, 0.3);
    const auto a = random_image(rng, h, w);
    auto b = a;
    for (std::size_t i = 0; i < b.data.size(); i += 5) b.data[i] = static_cast<float>(uniform(rng));
    const auto flow = random_flow(rng, h, w, 2.0);
    const auto mask = occlusion_mask(a, b, flow, kDefaultAlphaOcc, kDefaultOcclusionThreshold);
    const auto warped = oracle::oracle_warp_labels(ref, flow);
    const auto vis = visible_of(mask);
    for (bool strict : {false, true}) {
      ASSERT_EQ(refine_cutout(cur, ref, flow, mask, strict), oracle::oracle_refine(cur, warped, vis, true, strict));
    }
    ASSERT_EQ(refine_fillin(cur, ref, flow, mask), oracle::oracle_refine(cur, warped, vis, false, false));
  }
}

TEST(Refine, ShapeMismatch) {
  const auto flow = FlowField::constant(1, 3, 0, 0);
  try {
    refine_cutout(row({1, 2, 3}), row({1, 2}), flow, mask_of({1, 1, 1}));
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST(RefineClip, RemovesFlickeredShapes) {
  synth::SynthConfig cfg;
  cfg.frames_per_clip = 6;
  cfg.height = cfg.width = 40;
  cfg.noise.flicker_prob = 0.3;
  cfg.noise.softmax_temperature = 0.2;
  double raw_miou = 0.0, refined_miou = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    cfg.seed = seed;
    const auto clip = synth::render_clip(cfg, 0).data;
    std::vector<LabelMap> labels, gts;
    for (const auto& f : clip.frames) {
      labels.push_back(argmax_labels(f.pred));
      gts.push_back(*f.gt);
    }
    const auto refined = refine_clip(labels, clip, RefineParams{}, 2);
    EXPECT_EQ(refined[0], labels[0]);  // no reference for the first frame
    raw_miou += p_miou(labels, gts, 4).miou.mean;
    refined_miou += p_miou(refined, gts, 4).miou.mean;
  }
  EXPECT_GT(refined_miou, raw_miou);
}

TEST(RefineClip, FillInNeverRemovesLabels) {
  synth::SynthConfig cfg;
  cfg.noise.softmax_temperature = 0.3;
  const auto clip = synth::render_clip(cfg, 0).data;
  Rng rng(2);
  std::vector<LabelMap> labels;
  for (const auto& f : clip.frames) {
    auto l = argmax_labels(f.pred);
    for (auto& v : l.data.values()) {
      if (uniform(rng) < 0.4) v = kIgnore;
    }
    labels.push_back(l);
  }
  RefineParams p;
  p.mode = RefineMode::FillIn;
  const auto out = refine_clip(labels, clip, p);
  for (std::size_t t = 0; t < labels.size(); ++t) {
    for (std::size_t i = 0; i < labels[t].data.size(); ++i) {
      if (labels[t].data[i] != kIgnore) EXPECT_EQ(out[t].data[i], labels[t].data[i]);
    }
    EXPECT_GE(out[t].labeled_count(), labels[t].labeled_count());
  }
}

TEST(RefineClip, ForwardReferenceLeavesLastFrame) {
  synth::SynthConfig cfg;
  cfg.noise.flicker_prob = 0.5;
  const auto clip = synth::render_clip(cfg, 0).data;
  std::vector<LabelMap> labels;
  for (const auto& f : clip.frames) labels.push_back(argmax_labels(f.pred));
  RefineParams p;
  p.reference_offset = 1;
  const auto out = refine_clip(labels, clip, p);
  EXPECT_EQ(out.back(), labels.back());
}

TEST(RefineClip, InvalidInputs) {
  synth::SynthConfig cfg;
  const auto clip = synth::render_clip(cfg, 0).data;
  std::vector<LabelMap> labels;
  for (const auto& f : clip.frames) labels.push_back(argmax_labels(f.pred));
  RefineParams p;
  p.reference_offset = 0;
  try {
    refine_clip(labels, clip, p);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidConfig);
  }
  labels.pop_back();
  try {
    refine_clip(labels, clip, RefineParams{});
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
  EXPECT_EQ(parse_refine_mode("fillin"), RefineMode::FillIn);
}
