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

#include "fsdet/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fsdet/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fsdet {

void write_loss_log(const std::string& path,
                    const std::vector<LossRecord>& records,
                    const std::string& config_hash, std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TrainError("cannot write " + path);
  out << "# loss_log\tconfig_hash=" << config_hash << "\tseed=" << seed
      << '\n';
  out << "# step\trpn_cls\trpn_reg\troi_cls\troi_reg\ttotal\n";
  out.precision(17);
  for (const auto& r : records)
    out << r.step << '\t' << r.rpn_cls << '\t' << r.rpn_reg << '\t'
        << r.roi_cls << '\t' << r.roi_reg << '\t' << r.total() << '\n';
}

std::vector<LossRecord> read_loss_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TrainError("cannot read " + path);
  std::vector<LossRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    LossRecord r;
    double total;
    if (ss >> r.step >> r.rpn_cls >> r.rpn_reg >> r.roi_cls >> r.roi_reg >>
        total)
      out.push_back(r);
  }
  return out;
}

void save_checkpoint(const std::string& path, FewShotModel& model,
                     const CheckpointMeta& meta) {
  std::string tmp = path + ".tmp";
  save_param_archive(tmp, model.parameters());
  fs::rename(tmp, path);
  json j;
  j["class_ids"] = meta.class_ids;
  j["class_names"] = meta.class_names;
  j["feature_dim"] = model.detector.cfg.feature_dim;
  j["phase"] = meta.phase;
  j["detector_kind"] = meta.detector_kind;
  j["fusion"] = fusion_mode_name(model.fusion);
  j["config_hash"] = meta.config_hash;
  j["seed"] = meta.seed;
  j["steps"] = meta.steps;
  j["k"] = meta.k;
  j["rho"] = meta.rho;
  std::string meta_tmp = path + ".meta.json.tmp";
  {
    std::ofstream out(meta_tmp, std::ios::binary);
    out << j.dump(2) << '\n';
    if (!out) throw TrainError("cannot write " + meta_tmp);
  }
  fs::rename(meta_tmp, path + ".meta.json");
}

FewShotModel load_checkpoint(const std::string& path, CheckpointMeta* meta) {
  std::ifstream in(path + ".meta.json");
  if (!in) throw TrainError("missing checkpoint metadata for " + path);
  json j = json::parse(in);
  CheckpointMeta m;
  m.class_ids = j.at("class_ids").get<std::vector<int>>();
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  m.feature_dim = j.at("feature_dim").get<int>();
  m.phase = j.at("phase").get<std::string>();
  m.detector_kind = j.at("detector_kind").get<std::string>();
  m.fusion = j.at("fusion").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.steps = j.at("steps").get<long>();
  m.k = j.value("k", 0);
  m.rho = j.value("rho", "");

  FewShotModel model;
  model.fusion = parse_fusion_mode(m.fusion);
  model.class_ids = m.class_ids;
  model.detector.build(detector_config_for(m.detector_kind),
                       static_cast<int>(m.class_ids.size()), 0);
  if (model.detector.cfg.feature_dim != m.feature_dim)
    throw TrainError("checkpoint feature_dim mismatch");
  model.gru = GruWeights(m.feature_dim);
  load_param_archive(path, model.parameters());
  if (meta) *meta = m;
  return model;
}

// ---- losses ----

double classification_loss(const Mat& logits, const std::vector<int>& labels,
                           Mat* glogits) {
  int n = static_cast<int>(labels.size());
  if (n == 0) return 0.0;
  if (glogits) *glogits = Mat::Zero(logits.rows(), logits.cols());
  double loss = 0;
  for (int i = 0; i < n; ++i) {
    Vec g;
    loss += softmax_cross_entropy(logits.col(i), labels[i], glogits ? &g : nullptr);
    if (glogits) glogits->col(i) = g / n;
  }
  return loss / n;
}

double regression_loss(const Mat& deltas, const std::vector<RoiSample>& rois,
                       Mat* gdeltas) {
  if (gdeltas) *gdeltas = Mat::Zero(deltas.rows(), deltas.cols());
  int n_fg = 0;
  for (const auto& r : rois)
    if (r.label > 0) ++n_fg;
  if (n_fg == 0) return 0.0;
  double loss = 0;
  for (size_t i = 0; i < rois.size(); ++i) {
    if (rois[i].label <= 0) continue;
    int row0 = 4 * (rois[i].label - 1);
    for (int k = 0; k < 4; ++k) {
      double diff = deltas(row0 + k, static_cast<Eigen::Index>(i)) -
                    rois[i].reg_target[k];
      loss += smooth_l1(diff);
      if (gdeltas)
        (*gdeltas)(row0 + k, static_cast<Eigen::Index>(i)) =
            smooth_l1_grad(diff) / n_fg;
    }
  }
  return loss / n_fg;
}

std::vector<Param*> support_encoder_parameters(FewShotModel& model) {
  std::vector<Param*> out = model.detector.backbone.parameters();
  for (Param* p : model.detector.roi_head.parameters()) out.push_back(p);
  return out;
}

// ---- one training step ----

namespace {

struct GtBox {
  BBox box;
  int label = 0;  // local class + 1 when active, -1 when masked
};

struct StepData {
  const Image* query = nullptr;
  std::vector<GtBox> gts;
  const std::vector<SupportImage>* supports = nullptr;
};

struct RpnTargets {
  std::vector<int> labels;   // -1 ignore, 0 negative, 1 positive
  std::vector<int> matched;  // gt index per anchor
  std::vector<int> sampled;  // anchor indices in the loss
  int n_pos = 0;
};

RpnTargets assign_rpn_targets(const std::vector<BBox>& anchors,
                              const std::vector<GtBox>& gts, int batch,
                              std::mt19937_64& rng) {
  RpnTargets t;
  size_t n = anchors.size();
  t.labels.assign(n, -1);
  t.matched.assign(n, -1);

  std::vector<int> active;
  for (size_t g = 0; g < gts.size(); ++g)
    if (gts[g].label > 0) active.push_back(static_cast<int>(g));

  std::vector<double> best_for_gt(active.size(), 0.0);
  std::vector<int> best_anchor(active.size(), -1);
  for (size_t a = 0; a < n; ++a) {
    double max_active = 0, max_masked = 0;
    int arg = -1;
    for (size_t gi = 0; gi < active.size(); ++gi) {
      double v = iou(anchors[a], gts[active[gi]].box);
      if (v > max_active) {
        max_active = v;
        arg = active[gi];
      }
      if (v > best_for_gt[gi]) {
        best_for_gt[gi] = v;
        best_anchor[gi] = static_cast<int>(a);
      }
    }
    for (const auto& g : gts)
      if (g.label < 0) max_masked = std::max(max_masked, iou(anchors[a], g.box));
    if (max_active >= 0.7) {
      t.labels[a] = 1;
      t.matched[a] = arg;
    } else if (max_active < 0.3 && max_masked < 0.3) {
      t.labels[a] = 0;
    }
    if (t.labels[a] == 0 && arg >= 0) t.matched[a] = arg;
  }
  // the best anchor of every gt is positive regardless of threshold
  for (size_t gi = 0; gi < active.size(); ++gi)
    if (best_anchor[gi] >= 0 && best_for_gt[gi] > 0) {
      t.labels[best_anchor[gi]] = 1;
      t.matched[best_anchor[gi]] = active[gi];
    }

  std::vector<int> pos, neg;
  for (size_t a = 0; a < n; ++a) {
    if (t.labels[a] == 1) pos.push_back(static_cast<int>(a));
    if (t.labels[a] == 0) neg.push_back(static_cast<int>(a));
  }
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  int keep_pos = std::min<int>(static_cast<int>(pos.size()), batch / 2);
  int keep_neg =
      std::min<int>(static_cast<int>(neg.size()), batch - keep_pos);
  t.sampled.assign(pos.begin(), pos.begin() + keep_pos);
  t.sampled.insert(t.sampled.end(), neg.begin(), neg.begin() + keep_neg);
  t.n_pos = keep_pos;
  return t;
}

std::vector<RoiSample> sample_rois(const std::vector<Proposal>& props,
                                   const std::vector<GtBox>& gts, int max_rois,
                                   std::mt19937_64& rng) {
  std::vector<RoiSample> fg, bg;
  for (const auto& p : props) {
    double best_active = 0, best_masked = 0;
    int arg = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      double v = iou(p.box, gts[g].box);
      if (gts[g].label > 0) {
        if (v > best_active) {
          best_active = v;
          arg = static_cast<int>(g);
        }
      } else {
        best_masked = std::max(best_masked, v);
      }
    }
    if (best_masked >= 0.5 && best_masked > best_active) continue;  // ignore
    RoiSample s;
    s.box = p.box;
    if (best_active >= 0.5) {
      s.label = gts[arg].label;
      s.reg_target = encode_box(p.box, gts[arg].box);
      fg.push_back(s);
    } else {
      s.label = 0;
      bg.push_back(s);
    }
  }
  std::shuffle(fg.begin(), fg.end(), rng);
  std::shuffle(bg.begin(), bg.end(), rng);
  int keep_fg = std::min<int>(static_cast<int>(fg.size()), max_rois / 2);
  int keep_bg = std::min<int>(static_cast<int>(bg.size()), max_rois - keep_fg);
  std::vector<RoiSample> out(fg.begin(), fg.begin() + keep_fg);
  out.insert(out.end(), bg.begin(), bg.begin() + keep_bg);
  return out;
}

LossRecord train_step(FewShotModel& model, SgdOptimizer& opt,
                      const StepData& data, const TrainConfig& cfg,
                      std::mt19937_64& rng, long step) {
  Detector& det = model.detector;
  std::vector<Param*> params = model.parameters();
  SgdOptimizer::zero_grad(params);

  LossRecord rec;
  rec.step = step;

  // ---- query forward ----
  Image norm = normalize_image(*data.query, det.cfg);
  BackboneCtx bctx;
  BackboneFeatures feat = backbone_forward(det.backbone, norm, det.cfg, &bctx);
  RpnCtx rctx;
  RpnOut rpn_out = rpn_forward(det.rpn, feat.map, &rctx);
  std::vector<BBox> anchors = generate_anchors(det.cfg, feat.map.h, feat.map.w);

  // ---- RPN losses ----
  RpnTargets rpn_t = assign_rpn_targets(anchors, data.gts, cfg.rpn_batch, rng);
  Tensor3 g_rpn_cls(rpn_out.cls_logits.c, rpn_out.cls_logits.h,
                    rpn_out.cls_logits.w);
  Tensor3 g_rpn_reg(rpn_out.reg_deltas.c, rpn_out.reg_deltas.h,
                    rpn_out.reg_deltas.w);
  int fw = feat.map.w;
  int a_per_cell = det.cfg.num_anchors();
  auto anchor_cell = [&](int idx, int* y, int* x, int* a) {
    *a = idx % a_per_cell;
    int cell = idx / a_per_cell;
    *x = cell % fw;
    *y = cell / fw;
  };
  if (!rpn_t.sampled.empty()) {
    int n_s = static_cast<int>(rpn_t.sampled.size());
    for (int idx : rpn_t.sampled) {
      int y, x, a;
      anchor_cell(idx, &y, &x, &a);
      double target = rpn_t.labels[idx] == 1 ? 1.0 : 0.0;
      double glogit;
      rec.rpn_cls +=
          bce_with_logit(rpn_out.cls_logits.at(a, y, x), target, &glogit) / n_s;
      g_rpn_cls.at(a, y, x) += glogit / n_s;
      if (rpn_t.labels[idx] == 1) {
        auto tgt = encode_box(anchors[idx], data.gts[rpn_t.matched[idx]].box);
        for (int k = 0; k < 4; ++k) {
          double diff = rpn_out.reg_deltas.at(4 * a + k, y, x) - tgt[k];
          rec.rpn_reg += smooth_l1(diff) / std::max(1, rpn_t.n_pos);
          g_rpn_reg.at(4 * a + k, y, x) +=
              smooth_l1_grad(diff) / std::max(1, rpn_t.n_pos);
        }
      }
    }
  }

  // ---- proposals and RoI sampling ----
  std::vector<Proposal> props =
      rpn_propose(rpn_out, anchors, data.query->w, data.query->h, det.cfg);
  for (const auto& g : data.gts)  // gt boxes join the proposal set in training
    if (g.label > 0) props.push_back({g.box, 1.0});
  std::vector<RoiSample> rois =
      sample_rois(props, data.gts, cfg.rois_per_image, rng);

  Tensor3 gfeat(feat.map.c, feat.map.h, feat.map.w);

  if (!rois.empty()) {
    std::vector<Tensor3> pooled;
    std::vector<RoiAlignCtx> align_ctx(rois.size());
    for (size_t i = 0; i < rois.size(); ++i)
      pooled.push_back(
          roi_align(feat, rois[i].box, det.cfg.roi_pool_size, &align_ctx[i]));
    RoiHeadCtx hctx;
    Mat roi_feats = roi_head_forward(det.roi_head, stack_pooled(pooled), &hctx);

    // ---- support path ----
    SupportFeatureBank bank;
    SupportEncodeCtx sctx;
    bool with_bank = model.fusion != FusionMode::kNone;
    if (with_bank) {
      if (!data.supports || data.supports->empty())
        throw TrainError("fusion enabled but no support images supplied");
      bank = support_encode(det, *data.supports, &sctx);
    }

    std::vector<FuseCtx> fuse_ctxs;
    Mat fused = fuse_batch(model, roi_feats, with_bank ? &bank : nullptr,
                           model.fusion == FusionMode::kGru ? &fuse_ctxs
                                                            : nullptr);
    PredictCtx pctx;
    PredictOut pred = predict_head_forward(det.predict, fused, &pctx);

    std::vector<int> labels;
    for (const auto& r : rois) labels.push_back(r.label);
    Mat gcls, greg;
    rec.roi_cls = classification_loss(pred.cls_logits, labels, &gcls);
    rec.roi_reg = regression_loss(pred.reg_deltas, rois, &greg);

    // ---- backward through the heads ----
    Mat gfused = predict_head_backward(det.predict, pctx, gcls, greg);
    Mat groi(gfused.rows(), gfused.cols());
    Mat gbank;
    if (model.fusion == FusionMode::kGru) {
      gbank = Mat::Zero(bank.vectors.rows(), bank.vectors.cols());
      for (int i = 0; i < gfused.cols(); ++i) {
        auto [gr, gb] = fuse_backward(model.gru, fuse_ctxs[i], gfused.col(i));
        groi.col(i) = gr;
        gbank += gb;
      }
    } else if (model.fusion == FusionMode::kXcorr) {
      Vec mean = bank.vectors.rowwise().mean();
      Vec gmean = Vec::Zero(mean.size());
      for (int i = 0; i < gfused.cols(); ++i) {
        groi.col(i) = gfused.col(i).cwiseProduct(mean);
        gmean += gfused.col(i).cwiseProduct(roi_feats.col(i));
      }
      gbank = Mat::Zero(bank.vectors.rows(), bank.vectors.cols());
      for (int c = 0; c < bank.size(); ++c)
        gbank.col(c) = gmean / bank.size();
    } else {
      groi = gfused;
    }

    Mat gpooled = roi_head_backward(det.roi_head, hctx, groi);
    int p = det.cfg.roi_pool_size;
    for (size_t i = 0; i < rois.size(); ++i) {
      Tensor3 g = unflatten(gpooled.col(static_cast<Eigen::Index>(i)),
                            feat.map.c, p, p);
      Tensor3 gf = roi_align_backward(align_ctx[i], g);
      for (size_t e = 0; e < gfeat.data.size(); ++e) gfeat.data[e] += gf.data[e];
    }
    if (with_bank) support_encode_backward(det, sctx, gbank);
  }

  // ---- RPN and backbone backward ----
  Tensor3 gfeat_rpn = rpn_backward(det.rpn, rctx, g_rpn_cls, g_rpn_reg);
  for (size_t e = 0; e < gfeat.data.size(); ++e)
    gfeat.data[e] += gfeat_rpn.data[e];
  backbone_backward(det.backbone, bctx, gfeat);

  SgdOptimizer::clip_grad_norm(params, cfg.grad_clip);
  opt.step(params);
  return rec;
}

void check_finite(const LossRecord& rec, FewShotModel& model,
                  const TrainConfig& cfg) {
  bool ok = std::isfinite(rec.rpn_cls) && std::isfinite(rec.rpn_reg) &&
            std::isfinite(rec.roi_cls) && std::isfinite(rec.roi_reg);
  if (ok) return;
  std::string note = "non-finite loss at step " + std::to_string(rec.step);
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    std::string snap = (fs::path(cfg.out_dir) / "diagnostic_snapshot.ck").string();
    save_param_archive(snap, model.parameters());
    note += "; parameter snapshot at " + snap;
  }
  throw TrainError(note);
}

void run_training(FewShotModel& model, const DatasetIndex& index,
                  const std::vector<long>& query_pool, const SupportPool& pool,
                  const std::function<bool(long)>& is_active,
                  const TrainConfig& cfg, TrainResult* result) {
  if (query_pool.empty()) throw TrainError("empty query pool");
  std::vector<int> active_classes;
  for (const auto& [cls, ids] : pool)
    if (!ids.empty()) active_classes.push_back(cls);

  ImageCache cache(index);
  SgdOptimizer opt(cfg.lr, cfg.momentum);
  for (long step = 0; step < cfg.steps; ++step) {
    auto rng = make_rng(cfg.seed, "step" + std::to_string(step));
    std::uniform_int_distribution<size_t> pick(0, query_pool.size() - 1);
    long qid = query_pool[pick(rng)];

    StepData data;
    const Image& img = cache.get(qid);
    data.query = &img;
    for (long aid : index.annotations_of(qid)) {
      const Annotation& a = index.annotation(aid);
      int local = model.local_index(a.class_id);
      bool active = is_active(aid) && local >= 0;
      data.gts.push_back({a.bbox, active ? local + 1 : -1});
    }

    std::vector<SupportImage> supports;
    if (model.fusion != FusionMode::kNone) {
      Episode ep = build_episode(pool, active_classes, qid,
                                 derive_seed(cfg.seed, "ep" + std::to_string(step)));
      for (const auto& ref : ep.supports)
        supports.push_back(make_support_crop(index,
                                             index.annotation(ref.annotation_id),
                                             model.detector.cfg.support_size,
                                             &cache));
    }
    data.supports = &supports;

    LossRecord rec = train_step(model, opt, data, cfg, rng, step);
    check_finite(rec, model, cfg);
    if (result) {
      result->losses.push_back(rec);
      result->episode_queries.push_back(qid);
    }
  }
}

}  // namespace

FewShotModel train_base(const DatasetIndex& index, const SplitSpec& split,
                        const TrainConfig& cfg, TrainResult* result) {
  FewShotModel model;
  model.fusion = cfg.fusion;
  model.class_ids = split.classes.base;
  model.detector.build(detector_config_for(cfg.detector_kind),
                       static_cast<int>(model.class_ids.size()),
                       derive_seed(cfg.seed, "detector"));
  model.gru = GruWeights(model.detector.cfg.feature_dim);
  auto grng = make_rng(cfg.seed, "gru_init");
  model.gru.init(grng);

  SupportPool pool = phase1_support_pool(index, split);
  std::vector<long> queries;
  for (long id : split.train_images)
    if (split.phase1_eligible(index, id) && !index.annotations_of(id).empty())
      queries.push_back(id);
  std::sort(queries.begin(), queries.end());

  run_training(model, index, queries, pool, [](long) { return true; }, cfg,
               result);
  return model;
}

void finetune_novel(FewShotModel& model, const DatasetIndex& index,
                    const SplitSpec& split, const FinetuneSet& set,
                    const TrainConfig& cfg, TrainResult* result) {
  // grow the head with the novel classes, keeping base rows intact
  std::vector<int> new_ids = model.class_ids;
  for (int c : split.classes.novel)
    if (model.local_index(c) < 0) new_ids.push_back(c);
  if (new_ids.size() > model.class_ids.size()) {
    auto rng = make_rng(cfg.seed, "expand");
    expand_predict_head(model.detector, static_cast<int>(new_ids.size()), rng);
    model.class_ids = new_ids;
  }

  SupportPool pool = finetune_support_pool(index, set);
  std::vector<long> queries = set.image_ids;
  run_training(model, index, queries, pool,
               [&set](long aid) { return set.active_annotations.count(aid) > 0; },
               cfg, result);
}

FewShotModel train_baseline(const DatasetIndex& index, const SplitSpec& split,
                            BaselineMode mode, const TrainConfig& base_cfg,
                            const TrainConfig& tune_cfg, TrainResult* result) {
  TrainConfig b = base_cfg;
  TrainConfig t = tune_cfg;
  b.fusion = FusionMode::kNone;
  t.fusion = FusionMode::kNone;

  if (mode == BaselineMode::kFt) {
    FewShotModel model = train_base(index, split, b, result);
    FinetuneSet set = sample_finetune_set(index, split, t.budget, t.seed);
    finetune_novel(model, index, split, set, t, result);
    return model;
  }

  // FRCN-joint: one phase over all base annotations plus exactly k
  // active novel annotations per class
  ShotBudget novel_only{t.budget.k, 0};
  FinetuneSet sel = sample_finetune_set(index, split, novel_only, t.seed);

  FewShotModel model;
  model.fusion = FusionMode::kNone;
  model.class_ids = split.classes.base;
  for (int c : split.classes.novel) model.class_ids.push_back(c);
  std::sort(model.class_ids.begin(), model.class_ids.end());
  model.detector.build(detector_config_for(b.detector_kind),
                       static_cast<int>(model.class_ids.size()),
                       derive_seed(b.seed, "detector"));
  model.gru = GruWeights(model.detector.cfg.feature_dim);

  std::set<int> novel(split.classes.novel.begin(), split.classes.novel.end());
  auto is_active = [&](long aid) {
    const Annotation& a = index.annotation(aid);
    if (!novel.count(a.class_id)) return true;
    return sel.active_annotations.count(aid) > 0;
  };
  std::vector<long> queries;
  for (long id : split.train_images)
    if (!index.annotations_of(id).empty()) queries.push_back(id);
  std::sort(queries.begin(), queries.end());

  run_training(model, index, queries, SupportPool{}, is_active, b, result);
  return model;
}

TrainResult overfit_one_episode(FewShotModel& model, const DatasetIndex& index,
                                long query_image_id, const Episode& episode,
                                const TrainConfig& cfg) {
  ImageCache cache(index);
  const Image& img = cache.get(query_image_id);

  StepData data;
  data.query = &img;
  for (long aid : index.annotations_of(query_image_id)) {
    const Annotation& a = index.annotation(aid);
    int local = model.local_index(a.class_id);
    data.gts.push_back({a.bbox, local >= 0 ? local + 1 : -1});
  }
  std::vector<SupportImage> supports;
  if (model.fusion != FusionMode::kNone)
    for (const auto& ref : episode.supports)
      supports.push_back(make_support_crop(index,
                                           index.annotation(ref.annotation_id),
                                           model.detector.cfg.support_size,
                                           &cache));
  data.supports = &supports;

  TrainResult result;
  SgdOptimizer opt(cfg.lr, cfg.momentum);
  for (long step = 0; step < cfg.steps; ++step) {
    auto rng = make_rng(cfg.seed, "step" + std::to_string(step));
    LossRecord rec = train_step(model, opt, data, cfg, rng, step);
    check_finite(rec, model, cfg);
    result.losses.push_back(rec);
    result.episode_queries.push_back(query_image_id);
  }
  return result;
}

}  // namespace fsdet
