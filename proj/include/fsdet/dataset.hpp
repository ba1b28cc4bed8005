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

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "fsdet/geometry.hpp"

namespace fsdet {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InfeasibleBudgetError : DataError {
  std::string class_name;
  InfeasibleBudgetError(const std::string& cls, const std::string& msg)
      : DataError(msg), class_name(cls) {}
};

struct Annotation {
  long id = -1;
  long image_id = -1;
  int class_id = -1;
  BBox bbox;
  bool masked = false;  // ignore-region flag, set by the shot sampler
};

struct ImageRecord {
  long id = -1;
  std::string path;  // relative to the index root
  int width = 0, height = 0;
};

struct ParseIssue {
  std::string file;
  int line = 0;
  std::string message;
};

// Immutable catalog of one dataset: images, annotations, class names.
class DatasetIndex {
 public:
  DatasetIndex(std::string root, std::vector<std::string> classes,
               std::vector<ImageRecord> images,
               std::vector<Annotation> annotations);

  const std::string& root() const { return root_; }
  const std::vector<std::string>& classes() const { return classes_; }
  const std::vector<ImageRecord>& images() const { return images_; }
  const std::vector<Annotation>& annotations() const { return annotations_; }

  const ImageRecord& image(long id) const;
  const Annotation& annotation(long id) const;
  const std::vector<long>& annotations_of(long image_id) const;
  int class_count(int class_id) const;
  int class_id_of(const std::string& name) const;  // -1 when absent

  std::string image_path(long id) const;  // root-joined

 private:
  std::string root_;
  std::vector<std::string> classes_;
  std::vector<ImageRecord> images_;
  std::vector<Annotation> annotations_;
  std::unordered_map<long, size_t> image_by_id_;
  std::unordered_map<long, std::vector<long>> anns_by_image_;
  std::vector<int> class_counts_;
  static const std::vector<long> kNoAnnotations;
};

enum class AnnotationFormat { kVocXml, kNwpuTxt, kCanonical };

AnnotationFormat parse_format_tag(const std::string& tag);

// Reads a dataset tree. Malformed records are collected in `issues`;
// throws DataError only when no valid record survives.
DatasetIndex parse_annotations(const std::string& root, AnnotationFormat fmt,
                               std::vector<ParseIssue>* issues = nullptr);

// Canonical line-oriented index file (tab separated records,
// semicolon-separated annotation tuples).
void write_index(const DatasetIndex& index, const std::string& path);
DatasetIndex read_index(const std::string& path, const std::string& root);

struct ClassSplit {
  std::vector<int> base;   // ascending class ids
  std::vector<int> novel;  // ascending class ids
};

enum class Phase { kBase, kFinetune, kJoint };
std::string phase_name(Phase p);

struct SplitSpec {
  ClassSplit classes;
  std::set<long> train_images;
  std::set<long> test_images;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  bool is_train(long image_id) const { return train_images.count(image_id); }
  // Phase-1 episodes must not see novel objects at all.
  bool phase1_eligible(const DatasetIndex& index, long image_id) const;
};

SplitSpec make_split(const DatasetIndex& index,
                     const std::vector<int>& novel_classes,
                     double train_fraction, std::uint64_t seed);

void write_split(const SplitSpec& split, const DatasetIndex& index,
                 const std::string& path);
SplitSpec read_split(const std::string& path, const DatasetIndex& index);

struct ShotBudget {
  static constexpr int kInfinite = -1;
  int k = 1;
  int rho = 1;  // base:novel proportion; kInfinite = all base objects

  bool rho_infinite() const { return rho == kInfinite; }
};

struct FinetuneSet {
  std::vector<long> image_ids;                 // selected, ascending
  std::set<long> active_annotations;
  std::set<long> masked_annotations;
  std::map<int, int> active_counts;            // class id -> count
  ShotBudget budget;
  std::uint64_t seed = 0;
};

// Selects fine-tuning images so every novel class contributes exactly k
// active annotations and every base class rho*k (all when rho = inf,
// none when rho = 0). Surplus annotations on selected images are masked
// when allow_masking is set; otherwise an image whose class count
// exceeds the remaining budget is unusable and the budget may become
// infeasible, which raises InfeasibleBudgetError naming the class.
FinetuneSet sample_finetune_set(const DatasetIndex& index,
                                const SplitSpec& split,
                                const ShotBudget& budget, std::uint64_t seed,
                                bool allow_masking = true);

void write_finetune_set(const FinetuneSet& set, const DatasetIndex& index,
                        const std::string& path);
FinetuneSet read_finetune_set(const std::string& path,
                              const DatasetIndex& index);

struct SupportRef {
  int class_id = -1;
  long annotation_id = -1;
};

struct Episode {
  long query_image_id = -1;
  std::vector<int> active_classes;       // ascending
  std::vector<SupportRef> supports;      // one per active class, same order
};

// class id -> candidate annotation ids for support crops
using SupportPool = std::map<int, std::vector<long>>;

SupportPool phase1_support_pool(const DatasetIndex& index,
                                const SplitSpec& split);
SupportPool finetune_support_pool(const DatasetIndex& index,
                                  const FinetuneSet& set);

Episode build_episode(const SupportPool& pool,
                      const std::vector<int>& active_classes,
                      long query_image_id, std::uint64_t seed);

// Decoded-image cache shared by episode builders and evaluation.
class ImageCache {
 public:
  explicit ImageCache(const DatasetIndex& index) : index_(&index) {}
  const Image& get(long image_id);

 private:
  const DatasetIndex* index_;
  std::unordered_map<long, Image> cache_;
};

// Square-pads, crops and resizes one annotation into a support image.
SupportImage make_support_crop(const DatasetIndex& index,
                               const Annotation& ann, int target_size,
                               ImageCache* cache = nullptr);

struct SynthConfig {
  int num_classes = 3;          // 2..5 shape classes
  int num_images = 100;
  int image_size = 96;
  int max_objects = 4;
  double background_noise = 0.02;
  std::uint64_t seed = 0;
};

// Renders colored geometric shapes on a textured background and writes
// images plus the canonical index under out_dir. Every shape pixel lies
// inside its annotation box by construction.
DatasetIndex generate_synthetic_dataset(const SynthConfig& config,
                                        const std::string& out_dir);

}  // namespace fsdet
