/* Copyright (c) 2026 fsdet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "fsdet/rng.hpp"
#include "fsdet/training.hpp"

namespace fs = std::filesystem;
using namespace fsdet;

namespace {

std::string temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("fsdet_train_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

DatasetIndex small_synth(const std::string& tag, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.num_classes = 3;
  cfg.num_images = 16;
  cfg.image_size = 64;
  cfg.max_objects = 2;
  cfg.seed = seed;
  return generate_synthetic_dataset(cfg, temp_dir(tag));
}

TrainConfig quick_config(int steps, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.lr = 1e-3;
  cfg.seed = seed;
  cfg.budget = ShotBudget{2, 1};
  return cfg;
}

}  // namespace

TEST_CASE("classification loss is zero on a confident correct prediction") {
  Mat logits(3, 2);
  logits << 30, -30, -30, 30, -30, -30;  // column 0 -> class 0, col 1 -> 1
  logits.col(1) << -30, 30, -30;
  CHECK(classification_loss(logits, {0, 1}, nullptr) ==
        doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("regression loss: zero residual, and 0.5 per unit coordinate") {
  RoiSample fg;
  fg.label = 1;
  fg.reg_target = {0.2, -0.1, 0.3, 0.0};
  Mat deltas = Mat::Zero(4, 1);
  for (int i = 0; i < 4; ++i) deltas(i, 0) = fg.reg_target[i];
  CHECK(regression_loss(deltas, {fg}, nullptr) == 0.0);

  // residual of exactly 1 on each coordinate contributes 0.5 apiece
  for (int i = 0; i < 4; ++i) deltas(i, 0) = fg.reg_target[i] + 1.0;
  CHECK(regression_loss(deltas, {fg}, nullptr) == doctest::Approx(2.0));

  // background rows contribute nothing
  RoiSample bg;
  bg.label = 0;
  Mat d2 = Mat::Ones(4, 2) * 7.0;
  d2.col(0) = deltas.col(0);
  CHECK(regression_loss(d2, {fg, bg}, nullptr) == doctest::Approx(2.0));
}

TEST_CASE("support encoder parameters alias the detector's") {
  FewShotModel model;
  model.fusion = FusionMode::kGru;
  model.detector.build(tiny_detector_config(), 2, 3);
  model.gru = GruWeights(model.detector.cfg.feature_dim);
  auto enc = support_encoder_parameters(model);
  auto det = model.detector.parameters();
  CHECK(!enc.empty());
  for (Param* p : enc) {
    CHECK(std::find(det.begin(), det.end(), p) != det.end());
    CHECK(p->name.rfind("gru.", 0) != 0);
  }
}

TEST_CASE("loss log round-trips") {
  std::vector<LossRecord> recs = {{0, 0.5, 0.25, 1.0, 0.125},
                                  {1, 0.4, 0.2, 0.9, 0.1}};
  std::string path = temp_dir("losslog") + "/log.tsv";
  write_loss_log(path, recs, "deadbeef", 42);
  auto back = read_loss_log(path);
  REQUIRE(back.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(back[i].step == recs[i].step);
    CHECK(back[i].rpn_cls == recs[i].rpn_cls);
    CHECK(back[i].roi_reg == recs[i].roi_reg);
  }
}

TEST_CASE("overfitting one episode collapses the loss") {
  DatasetIndex index = small_synth("overfit", 5);
  FewShotModel model;
  model.fusion = FusionMode::kGru;
  model.class_ids = {0, 1, 2};
  model.detector.build(tiny_detector_config(), 3, 77);
  model.gru = GruWeights(model.detector.cfg.feature_dim);
  auto grng = make_rng(77, "gru");
  model.gru.init(grng);

  long query = -1;
  for (const auto& rec : index.images())
    if (!index.annotations_of(rec.id).empty()) {
      query = rec.id;
      break;
    }
  REQUIRE(query >= 0);
  SupportPool pool;
  for (const auto& a : index.annotations())
    pool[a.class_id].push_back(a.id);
  Episode ep = build_episode(pool, {0, 1, 2}, query, 9);

  TrainConfig cfg = quick_config(120, 13);
  cfg.lr = 2e-3;
  TrainResult result = overfit_one_episode(model, index, query, ep, cfg);
  REQUIRE(result.losses.size() == 120);
  double first = result.losses.front().total();
  double best = first;
  for (const auto& r : result.losses) best = std::min(best, r.total());
  CHECK(best < 0.5 * first);  // the full 90% bar lives in the acceptance run
  for (const auto& r : result.losses) CHECK(std::isfinite(r.total()));
}

TEST_CASE("one step changes parameters and training is deterministic") {
  DatasetIndex index = small_synth("determ", 8);
  SplitSpec split = make_split(index, {2}, 0.8, 3);

  auto run = [&](std::uint64_t seed) {
    TrainConfig cfg = quick_config(6, seed);
    TrainResult result;
    FewShotModel model = train_base(index, split, cfg, &result);
    return std::make_pair(std::move(model), result);
  };

  auto [m1, r1] = run(21);
  auto [m2, r2] = run(21);
  REQUIRE(r1.losses.size() == r2.losses.size());
  for (size_t i = 0; i < r1.losses.size(); ++i) {
    CHECK(r1.losses[i].total() == r2.losses[i].total());  // bitwise
    CHECK(r1.episode_queries[i] == r2.episode_queries[i]);
  }
  auto p1 = m1.parameters(), p2 = m2.parameters();
  for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i]->value == p2[i]->value);

  // the optimizer actually moved something
  FewShotModel fresh;
  fresh.fusion = FusionMode::kGru;
  fresh.class_ids = split.classes.base;
  fresh.detector.build(tiny_detector_config(),
                       static_cast<int>(split.classes.base.size()),
                       derive_seed(21, "detector"));
  bool changed = false;
  auto pf = fresh.parameters();
  for (size_t i = 0; i < pf.size() && i < p1.size(); ++i)
    if (p1[i]->name == pf[i]->name && p1[i]->value != pf[i]->value)
      changed = true;
  CHECK(changed);
}

TEST_CASE("finetune grows the head and preserves base class rows") {
  DatasetIndex index = small_synth("ft", 10);
  SplitSpec split = make_split(index, {2}, 0.8, 4);
  TrainConfig base_cfg = quick_config(5, 31);
  FewShotModel model = train_base(index, split, base_cfg);
  REQUIRE(model.detector.num_classes() == 2);
  Mat base_rows = model.detector.predict.cls.w.value;

  FinetuneSet set = sample_finetune_set(index, split, ShotBudget{2, 1}, 7);
  TrainConfig tune_cfg = quick_config(0, 32);  // expansion only, no steps
  tune_cfg.budget = set.budget;
  finetune_novel(model, index, split, set, tune_cfg);
  CHECK(model.detector.num_classes() == 3);
  CHECK(model.class_ids == std::vector<int>{0, 1, 2});
  // before the first update the base rows are bit-identical to phase 1
  CHECK(model.detector.predict.cls.w.value.topRows(base_rows.rows()) ==
        base_rows);

  tune_cfg.steps = 2;
  TrainResult result;
  finetune_novel(model, index, split, set, tune_cfg, &result);
  CHECK(result.losses.size() == 2);
  for (const auto& r : result.losses) CHECK(std::isfinite(r.total()));
}

TEST_CASE("ft baseline equals base + finetune with fusion none") {
  DatasetIndex index = small_synth("ftbase", 12);
  SplitSpec split = make_split(index, {2}, 0.8, 6);
  TrainConfig base_cfg = quick_config(5, 41);
  TrainConfig tune_cfg = quick_config(3, 42);

  FewShotModel composed;
  {
    TrainConfig b = base_cfg;
    b.fusion = FusionMode::kNone;
    composed = train_base(index, split, b);
    FinetuneSet set =
        sample_finetune_set(index, split, tune_cfg.budget, tune_cfg.seed);
    TrainConfig t = tune_cfg;
    t.fusion = FusionMode::kNone;
    finetune_novel(composed, index, split, set, t);
  }
  FewShotModel baseline =
      train_baseline(index, split, BaselineMode::kFt, base_cfg, tune_cfg);
  auto pc = composed.parameters(), pb = baseline.parameters();
  REQUIRE(pc.size() == pb.size());
  for (size_t i = 0; i < pc.size(); ++i) CHECK(pc[i]->value == pb[i]->value);
  CHECK(baseline.fusion == FusionMode::kNone);
}

TEST_CASE("checkpoints round-trip and baselines carry no GRU weights") {
  DatasetIndex index = small_synth("ckpt", 14);
  SplitSpec split = make_split(index, {2}, 0.8, 2);
  TrainConfig cfg = quick_config(3, 51);
  TrainResult result;
  FewShotModel model = train_base(index, split, cfg, &result);

  std::string dir = temp_dir("ckptio");
  CheckpointMeta meta;
  meta.class_ids = model.class_ids;
  meta.class_names = {"a", "b"};
  meta.phase = "base";
  meta.fusion = fusion_mode_name(model.fusion);
  meta.config_hash = "cafe";
  meta.seed = 51;
  meta.steps = 3;
  save_checkpoint(dir + "/m.bin", model, meta);

  CheckpointMeta back_meta;
  FewShotModel back = load_checkpoint(dir + "/m.bin", &back_meta);
  CHECK(back_meta.phase == "base");
  CHECK(back_meta.config_hash == "cafe");
  CHECK(back.class_ids == model.class_ids);
  auto pa = model.parameters(), pb = back.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);

  // a fusion=none baseline checkpoint must not mention the GRU
  TrainConfig none_cfg = quick_config(2, 52);
  none_cfg.fusion = FusionMode::kNone;
  FewShotModel baseline = train_base(index, split, none_cfg);
  CheckpointMeta bmeta = meta;
  bmeta.fusion = "none";
  save_checkpoint(dir + "/b.bin", baseline, bmeta);
  for (Param* p : baseline.parameters())
    CHECK(p->name.rfind("gru.", 0) != 0);
  FewShotModel bback = load_checkpoint(dir + "/b.bin", nullptr);
  CHECK(bback.fusion == FusionMode::kNone);
}
