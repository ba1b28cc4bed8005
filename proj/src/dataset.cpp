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

#include "fsdet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fsdet/rng.hpp"

namespace fs = std::filesystem;

namespace fsdet {

const std::vector<long> DatasetIndex::kNoAnnotations{};

DatasetIndex::DatasetIndex(std::string root, std::vector<std::string> classes,
                           std::vector<ImageRecord> images,
                           std::vector<Annotation> annotations)
    : root_(std::move(root)),
      classes_(std::move(classes)),
      images_(std::move(images)),
      annotations_(std::move(annotations)) {
  class_counts_.assign(classes_.size(), 0);
  for (size_t i = 0; i < images_.size(); ++i) {
    const auto& img = images_[i];
    if (img.width <= 0 || img.height <= 0)
      throw DataError("image " + img.path + " has bad dimensions");
    if (!image_by_id_.emplace(img.id, i).second)
      throw DataError("duplicate image id " + std::to_string(img.id));
  }
  for (const auto& ann : annotations_) {
    auto it = image_by_id_.find(ann.image_id);
    if (it == image_by_id_.end())
      throw DataError("annotation references missing image " +
                      std::to_string(ann.image_id));
    const auto& img = images_[it->second];
    if (!ann.bbox.valid() || ann.bbox.x1 < 0 || ann.bbox.y1 < 0 ||
        ann.bbox.x2 > img.width || ann.bbox.y2 > img.height)
      throw DataError("annotation " + std::to_string(ann.id) +
                      " bbox out of bounds in " + img.path);
    if (ann.class_id < 0 || ann.class_id >= static_cast<int>(classes_.size()))
      throw DataError("annotation " + std::to_string(ann.id) +
                      " has unknown class id");
    anns_by_image_[ann.image_id].push_back(ann.id);
    class_counts_[ann.class_id]++;
  }
}

const ImageRecord& DatasetIndex::image(long id) const {
  auto it = image_by_id_.find(id);
  if (it == image_by_id_.end())
    throw DataError("no image with id " + std::to_string(id));
  return images_[it->second];
}

const Annotation& DatasetIndex::annotation(long id) const {
  if (id < 0 || id >= static_cast<long>(annotations_.size()))
    throw DataError("no annotation with id " + std::to_string(id));
  return annotations_[id];
}

const std::vector<long>& DatasetIndex::annotations_of(long image_id) const {
  auto it = anns_by_image_.find(image_id);
  return it == anns_by_image_.end() ? kNoAnnotations : it->second;
}

int DatasetIndex::class_count(int class_id) const {
  return class_counts_.at(class_id);
}

int DatasetIndex::class_id_of(const std::string& name) const {
  auto it = std::find(classes_.begin(), classes_.end(), name);
  return it == classes_.end() ? -1 : static_cast<int>(it - classes_.begin());
}

std::string DatasetIndex::image_path(long id) const {
  return (fs::path(root_) / image(id).path).string();
}

AnnotationFormat parse_format_tag(const std::string& tag) {
  if (tag == "voc" || tag == "xml") return AnnotationFormat::kVocXml;
  if (tag == "nwpu" || tag == "txt") return AnnotationFormat::kNwpuTxt;
  if (tag == "canonical" || tag == "index") return AnnotationFormat::kCanonical;
  throw DataError("unknown annotation format tag: " + tag);
}

std::string phase_name(Phase p) {
  switch (p) {
    case Phase::kBase: return "base";
    case Phase::kFinetune: return "finetune";
    case Phase::kJoint: return "joint";
  }
  return "?";
}

namespace {

bool read_ppm_dims(const std::string& path, int* w, int* h) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return false;
  std::string magic;
  f >> magic;
  if (magic != "P6" && magic != "P5") return false;
  int c = f.peek();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') f.ignore(1 << 20, '\n');
    else f.get();
    c = f.peek();
  }
  return static_cast<bool>(f >> *w >> *h);
}

std::vector<std::string> sorted_files(const std::string& dir,
                                      const std::string& ext) {
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext)
      out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

// image dims via image_sizes.txt sidecar ("name width height") or the
// image header itself
std::map<std::string, std::pair<int, int>> load_size_sidecar(
    const std::string& root) {
  std::map<std::string, std::pair<int, int>> sizes;
  for (const auto& line : read_lines((fs::path(root) / "image_sizes.txt").string())) {
    std::istringstream ss(line);
    std::string name;
    int w, h;
    if (ss >> name >> w >> h) sizes[name] = {w, h};
  }
  return sizes;
}

struct RecordSink {
  std::vector<ParseIssue>* issues;
  void add(const std::string& file, int line, const std::string& msg) {
    if (issues) issues->push_back({file, line, msg});
  }
};

// Format B: one object per line, "(x1,y1),(x2,y2),class_id".
bool parse_nwpu_line(const std::string& line, BBox* box, int* class_token) {
  std::istringstream ss(line);
  auto expect = [&ss](char want) {
    char c;
    ss >> std::ws >> c;
    return static_cast<bool>(ss) && c == want;
  };
  auto number = [&ss](double* out) {
    ss >> std::ws >> *out;
    return static_cast<bool>(ss);
  };
  double x1, y1, x2, y2, cls;
  if (!expect('(') || !number(&x1) || !expect(',') || !number(&y1) ||
      !expect(')') || !expect(',') || !expect('(') || !number(&x2) ||
      !expect(',') || !number(&y2) || !expect(')') || !expect(',') ||
      !number(&cls))
    return false;
  std::string rest;
  ss >> rest;
  if (!rest.empty()) return false;
  *box = BBox{x1, y1, x2, y2};
  *class_token = static_cast<int>(cls);
  return true;
}

DatasetIndex parse_nwpu(const std::string& root,
                        std::vector<ParseIssue>* issues) {
  RecordSink sink{issues};
  auto sizes = load_size_sidecar(root);
  std::vector<std::string> classes = read_lines((fs::path(root) / "classes.txt").string());
  classes.erase(std::remove_if(classes.begin(), classes.end(),
                               [](const std::string& s) { return s.empty(); }),
                classes.end());

  std::vector<ImageRecord> images;
  std::vector<Annotation> anns;
  long next_image = 0, next_ann = 0;
  int max_token = 0;
  struct Pending {
    long image_id;
    BBox box;
    int token;
    std::string file;
    int line;
  };
  std::vector<Pending> pending;

  for (const auto& file : sorted_files((fs::path(root) / "annotations").string(), ".txt")) {
    std::string stem = fs::path(file).stem().string();
    ImageRecord rec;
    rec.id = next_image;
    rec.path = "images/" + stem + ".ppm";
    auto sit = sizes.find(stem);
    if (sit != sizes.end()) {
      rec.width = sit->second.first;
      rec.height = sit->second.second;
    } else if (!read_ppm_dims((fs::path(root) / rec.path).string(), &rec.width,
                              &rec.height)) {
      sink.add(file, 0, "cannot determine image dimensions for " + stem);
      continue;
    }
    int line_no = 0;
    bool any_bad_image = false;
    std::vector<Pending> local;
    for (const auto& line : read_lines(file)) {
      ++line_no;
      std::string trimmed = line;
      trimmed.erase(0, trimmed.find_first_not_of(" \t"));
      if (trimmed.empty()) continue;
      BBox box;
      int token;
      if (!parse_nwpu_line(trimmed, &box, &token)) {
        sink.add(file, line_no, "malformed object line");
        continue;
      }
      if (!box.valid() || box.x1 < 0 || box.y1 < 0 || box.x2 > rec.width ||
          box.y2 > rec.height) {
        sink.add(file, line_no, "bbox out of image bounds or degenerate");
        continue;
      }
      if (token < 1) {
        sink.add(file, line_no, "unknown class token");
        continue;
      }
      max_token = std::max(max_token, token);
      local.push_back({rec.id, box, token, file, line_no});
    }
    (void)any_bad_image;
    images.push_back(rec);
    ++next_image;
    pending.insert(pending.end(), local.begin(), local.end());
  }
  if (classes.empty())
    for (int i = 1; i <= max_token; ++i)
      classes.push_back("class_" + std::to_string(i));
  for (const auto& p : pending) {
    if (p.token > static_cast<int>(classes.size())) {
      sink.add(p.file, p.line, "unknown class token");
      continue;
    }
    Annotation a;
    a.id = next_ann++;
    a.image_id = p.image_id;
    a.class_id = p.token - 1;  // tokens are 1-based
    a.bbox = p.box;
    anns.push_back(a);
  }
  if (anns.empty()) throw DataError("no valid annotations under " + root);
  return DatasetIndex(root, classes, images, anns);
}

// Minimal tag scanner for the fixed VOC annotation schema.
std::optional<std::string> find_tag(const std::string& xml, const std::string& tag,
                                    size_t from, size_t* end_pos) {
  std::string open = "<" + tag + ">";
  std::string close = "</" + tag + ">";
  size_t a = xml.find(open, from);
  if (a == std::string::npos) return std::nullopt;
  size_t b = xml.find(close, a + open.size());
  if (b == std::string::npos) return std::nullopt;
  if (end_pos) *end_pos = b + close.size();
  return xml.substr(a + open.size(), b - a - open.size());
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

DatasetIndex parse_voc(const std::string& root,
                       std::vector<ParseIssue>* issues) {
  RecordSink sink{issues};
  std::vector<std::string> classes = read_lines((fs::path(root) / "classes.txt").string());
  classes.erase(std::remove_if(classes.begin(), classes.end(),
                               [](const std::string& s) { return s.empty(); }),
                classes.end());
  bool fixed_classes = !classes.empty();

  struct Pending {
    long image_id;
    BBox box;
    std::string name;
    std::string file;
  };
  std::vector<ImageRecord> images;
  std::vector<Pending> pending;
  long next_image = 0;

  for (const auto& file : sorted_files((fs::path(root) / "annotations").string(), ".xml")) {
    std::ifstream f(file);
    std::stringstream buf;
    buf << f.rdbuf();
    std::string xml = buf.str();

    auto size_block = find_tag(xml, "size", 0, nullptr);
    auto filename = find_tag(xml, "filename", 0, nullptr);
    if (!size_block || !filename) {
      sink.add(file, 0, "missing <size> or <filename>");
      continue;
    }
    auto ws = find_tag(*size_block, "width", 0, nullptr);
    auto hs = find_tag(*size_block, "height", 0, nullptr);
    if (!ws || !hs) {
      sink.add(file, 0, "missing width/height");
      continue;
    }
    ImageRecord rec;
    rec.id = next_image;
    rec.path = "images/" + trim(*filename);
    try {
      rec.width = std::stoi(trim(*ws));
      rec.height = std::stoi(trim(*hs));
    } catch (const std::exception&) {
      sink.add(file, 0, "non-numeric image size");
      continue;
    }
    if (rec.width <= 0 || rec.height <= 0) {
      sink.add(file, 0, "non-positive image size");
      continue;
    }

    size_t pos = 0;
    while (true) {
      size_t end = 0;
      auto obj = find_tag(xml, "object", pos, &end);
      if (!obj) break;
      pos = end;
      auto name = find_tag(*obj, "name", 0, nullptr);
      auto bnd = find_tag(*obj, "bndbox", 0, nullptr);
      if (!name || !bnd) {
        sink.add(file, 0, "object missing <name> or <bndbox>");
        continue;
      }
      auto coord = [&bnd](const char* tag) -> std::optional<double> {
        auto v = find_tag(*bnd, tag, 0, nullptr);
        if (!v) return std::nullopt;
        try {
          return std::stod(trim(*v));
        } catch (const std::exception&) {
          return std::nullopt;
        }
      };
      auto xmin = coord("xmin"), ymin = coord("ymin");
      auto xmax = coord("xmax"), ymax = coord("ymax");
      if (!xmin || !ymin || !xmax || !ymax) {
        sink.add(file, 0, "bad bndbox coordinates");
        continue;
      }
      // 1-based inclusive -> 0-based right/bottom exclusive
      BBox box{*xmin - 1, *ymin - 1, *xmax, *ymax};
      if (!box.valid() || box.x1 < 0 || box.y1 < 0 || box.x2 > rec.width ||
          box.y2 > rec.height) {
        sink.add(file, 0, "bbox out of image bounds or degenerate");
        continue;
      }
      pending.push_back({rec.id, box, trim(*name), file});
    }
    images.push_back(rec);
    ++next_image;
  }

  if (!fixed_classes) {
    std::set<std::string> names;
    for (const auto& p : pending) names.insert(p.name);
    classes.assign(names.begin(), names.end());
  }
  std::vector<Annotation> anns;
  long next_ann = 0;
  for (const auto& p : pending) {
    auto it = std::find(classes.begin(), classes.end(), p.name);
    if (it == classes.end()) {
      sink.add(p.file, 0, "unknown class token: " + p.name);
      continue;
    }
    Annotation a;
    a.id = next_ann++;
    a.image_id = p.image_id;
    a.class_id = static_cast<int>(it - classes.begin());
    a.bbox = p.box;
    anns.push_back(a);
  }
  if (anns.empty()) throw DataError("no valid annotations under " + root);
  return DatasetIndex(root, classes, images, anns);
}

}  // namespace

DatasetIndex parse_annotations(const std::string& root, AnnotationFormat fmt,
                               std::vector<ParseIssue>* issues) {
  switch (fmt) {
    case AnnotationFormat::kVocXml: return parse_voc(root, issues);
    case AnnotationFormat::kNwpuTxt: return parse_nwpu(root, issues);
    case AnnotationFormat::kCanonical:
      return read_index((fs::path(root) / "index.tsv").string(), root);
  }
  throw DataError("bad format");
}

namespace {

std::string format_number(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15) {
    std::ostringstream ss;
    ss << static_cast<long long>(v);
    return ss.str();
  }
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

void write_record_line(std::ostream& out, const DatasetIndex& index,
                       long image_id, const std::vector<long>& ann_ids,
                       const std::set<long>* masked) {
  const auto& img = index.image(image_id);
  out << img.id << '\t' << img.path << '\t' << img.width << '\t' << img.height
      << '\t';
  bool first = true;
  for (long aid : ann_ids) {
    const auto& a = index.annotation(aid);
    if (!first) out << ';';
    first = false;
    out << a.class_id << ':' << format_number(a.bbox.x1) << ','
        << format_number(a.bbox.y1) << ',' << format_number(a.bbox.x2) << ','
        << format_number(a.bbox.y2);
    if ((masked && masked->count(aid)) || a.masked) out << ",masked";
  }
  out << '\n';
}

struct ParsedRecord {
  ImageRecord image;
  struct Tuple {
    int class_id;
    BBox box;
    bool masked;
  };
  std::vector<Tuple> tuples;
};

ParsedRecord parse_record_line(const std::string& line, int line_no,
                               const std::string& path) {
  std::istringstream ss(line);
  ParsedRecord rec;
  std::string path_field, anns_field;
  std::string id_field, w_field, h_field;
  auto ctx = [&]() {
    return path + ":" + std::to_string(line_no);
  };
  if (!std::getline(ss, id_field, '\t') || !std::getline(ss, path_field, '\t') ||
      !std::getline(ss, w_field, '\t') || !std::getline(ss, h_field, '\t'))
    throw DataError(ctx() + ": short record");
  std::getline(ss, anns_field, '\t');
  try {
    rec.image.id = std::stol(id_field);
    rec.image.width = std::stoi(w_field);
    rec.image.height = std::stoi(h_field);
  } catch (const std::exception&) {
    throw DataError(ctx() + ": non-numeric field");
  }
  rec.image.path = path_field;
  std::istringstream as(anns_field);
  std::string tuple;
  while (std::getline(as, tuple, ';')) {
    if (tuple.empty()) continue;
    size_t colon = tuple.find(':');
    if (colon == std::string::npos) throw DataError(ctx() + ": bad tuple");
    ParsedRecord::Tuple t{};
    t.masked = false;
    try {
      t.class_id = std::stoi(tuple.substr(0, colon));
      std::istringstream cs(tuple.substr(colon + 1));
      std::string part;
      double vals[4];
      for (int i = 0; i < 4; ++i) {
        if (!std::getline(cs, part, ',')) throw DataError(ctx() + ": bad tuple");
        vals[i] = std::stod(part);
      }
      if (std::getline(cs, part, ',')) {
        if (part != "masked") throw DataError(ctx() + ": bad tuple flag");
        t.masked = true;
      }
      t.box = BBox{vals[0], vals[1], vals[2], vals[3]};
    } catch (const DataError&) {
      throw;
    } catch (const std::exception&) {
      throw DataError(ctx() + ": non-numeric tuple field");
    }
    rec.tuples.push_back(t);
  }
  return rec;
}

}  // namespace

void write_index(const DatasetIndex& index, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "# classes";
  for (const auto& c : index.classes()) out << '\t' << c;
  out << '\n';
  for (const auto& img : index.images())
    write_record_line(out, index, img.id, index.annotations_of(img.id),
                      nullptr);
}

DatasetIndex read_index(const std::string& path, const std::string& root) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<std::string> classes;
  std::vector<ImageRecord> images;
  std::vector<Annotation> anns;
  std::string line;
  int line_no = 0;
  long next_ann = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string tok;
      std::getline(ss, tok, '\t');
      if (trim(tok) == "classes")
        while (std::getline(ss, tok, '\t')) classes.push_back(tok);
      continue;
    }
    auto rec = parse_record_line(line, line_no, path);
    images.push_back(rec.image);
    for (const auto& t : rec.tuples) {
      Annotation a;
      a.id = next_ann++;
      a.image_id = rec.image.id;
      a.class_id = t.class_id;
      a.bbox = t.box;
      a.masked = t.masked;
      anns.push_back(a);
    }
  }
  if (classes.empty()) throw DataError(path + ": missing classes header");
  return DatasetIndex(root, classes, images, anns);
}

bool SplitSpec::phase1_eligible(const DatasetIndex& index,
                                long image_id) const {
  if (!is_train(image_id)) return false;
  std::set<int> novel(classes.novel.begin(), classes.novel.end());
  for (long aid : index.annotations_of(image_id))
    if (novel.count(index.annotation(aid).class_id)) return false;
  return true;
}

SplitSpec make_split(const DatasetIndex& index,
                     const std::vector<int>& novel_classes,
                     double train_fraction, std::uint64_t seed) {
  if (novel_classes.empty()) throw DataError("novel class set is empty");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw DataError("train fraction must lie in (0, 1)");
  std::set<int> novel(novel_classes.begin(), novel_classes.end());
  for (int c : novel)
    if (c < 0 || c >= static_cast<int>(index.classes().size()))
      throw DataError("novel class id out of range: " + std::to_string(c));
  if (novel.size() >= index.classes().size())
    throw DataError("novel set must be a strict subset of the class list");

  SplitSpec spec;
  spec.classes.novel.assign(novel.begin(), novel.end());
  for (int c = 0; c < static_cast<int>(index.classes().size()); ++c)
    if (!novel.count(c)) spec.classes.base.push_back(c);
  spec.train_fraction = train_fraction;
  spec.seed = seed;

  std::vector<long> ids;
  for (const auto& img : index.images()) ids.push_back(img.id);
  std::sort(ids.begin(), ids.end());
  auto rng = make_rng(seed, "split");
  std::shuffle(ids.begin(), ids.end(), rng);
  size_t n_train = static_cast<size_t>(
      std::llround(train_fraction * static_cast<double>(ids.size())));
  n_train = std::min(std::max<size_t>(n_train, 1), ids.size() - 1);
  for (size_t i = 0; i < ids.size(); ++i)
    (i < n_train ? spec.train_images : spec.test_images).insert(ids[i]);
  return spec;
}

void write_split(const SplitSpec& split, const DatasetIndex& index,
                 const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "# split\tseed=" << split.seed << "\ttrain_fraction="
      << format_number(split.train_fraction) << "\tnovel=";
  for (size_t i = 0; i < split.classes.novel.size(); ++i)
    out << (i ? "," : "") << split.classes.novel[i];
  out << '\n';
  for (const auto& img : index.images())
    out << img.id << '\t' << (split.is_train(img.id) ? "train" : "test")
        << '\n';
}

SplitSpec read_split(const std::string& path, const DatasetIndex& index) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  SplitSpec spec;
  std::string line;
  std::set<int> novel;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string tok;
      while (ss >> tok) {
        if (tok.rfind("seed=", 0) == 0) spec.seed = std::stoull(tok.substr(5));
        if (tok.rfind("train_fraction=", 0) == 0)
          spec.train_fraction = std::stod(tok.substr(15));
        if (tok.rfind("novel=", 0) == 0) {
          std::istringstream ns(tok.substr(6));
          std::string c;
          while (std::getline(ns, c, ',')) novel.insert(std::stoi(c));
        }
      }
      header_seen = true;
      continue;
    }
    std::istringstream ss(line);
    long id;
    std::string tag;
    if (!(ss >> id >> tag)) throw DataError(path + ": bad split line");
    if (tag == "train") spec.train_images.insert(id);
    else if (tag == "test") spec.test_images.insert(id);
    else throw DataError(path + ": bad split tag " + tag);
  }
  if (!header_seen) throw DataError(path + ": missing split header");
  spec.classes.novel.assign(novel.begin(), novel.end());
  for (int c = 0; c < static_cast<int>(index.classes().size()); ++c)
    if (!novel.count(c)) spec.classes.base.push_back(c);
  return spec;
}

FinetuneSet sample_finetune_set(const DatasetIndex& index,
                                const SplitSpec& split,
                                const ShotBudget& budget, std::uint64_t seed,
                                bool allow_masking) {
  if (budget.k < 1) throw DataError("shot count k must be >= 1");
  if (budget.rho < 0 && !budget.rho_infinite())
    throw DataError("bad base:novel proportion");

  // per-class budgets; classes absent from the map are fully masked
  std::map<int, long> remaining;
  auto pool_count = [&](int cls) {
    long n = 0;
    for (long img : split.train_images)
      for (long aid : index.annotations_of(img))
        if (index.annotation(aid).class_id == cls) ++n;
    return n;
  };
  for (int c : split.classes.novel) remaining[c] = budget.k;
  if (budget.rho_infinite()) {
    for (int c : split.classes.base) remaining[c] = pool_count(c);
  } else if (budget.rho > 0) {
    for (int c : split.classes.base)
      remaining[c] = static_cast<long>(budget.rho) * budget.k;
  }

  FinetuneSet out;
  out.budget = budget;
  out.seed = seed;
  auto rng = make_rng(seed, "finetune");
  std::set<long> selected;

  // novel classes first, then base, ascending ids within each group
  std::vector<int> order = split.classes.novel;
  for (int c : split.classes.base)
    if (remaining.count(c)) order.push_back(c);

  auto class_anns_on = [&](long img, int cls) {
    std::vector<long> ids;
    for (long aid : index.annotations_of(img))
      if (index.annotation(aid).class_id == cls) ids.push_back(aid);
    std::sort(ids.begin(), ids.end());
    return ids;
  };

  for (int cls : order) {
    if (remaining[cls] <= 0) continue;
    std::vector<long> candidates;
    for (long img : split.train_images)
      if (!class_anns_on(img, cls).empty()) candidates.push_back(img);
    std::sort(candidates.begin(), candidates.end());
    std::shuffle(candidates.begin(), candidates.end(), rng);

    for (long img : candidates) {
      if (remaining[cls] <= 0) break;
      if (selected.count(img)) continue;
      if (!allow_masking) {
        // the image must fit every scoped class it carries exactly
        bool fits = true;
        for (const auto& [c2, left] : remaining)
          if (static_cast<long>(class_anns_on(img, c2).size()) > left)
            fits = false;
        if (!fits) continue;
      }
      if (class_anns_on(img, cls).empty()) continue;
      selected.insert(img);
      for (long aid : index.annotations_of(img)) {
        int c2 = index.annotation(aid).class_id;
        auto it = remaining.find(c2);
        if (it != remaining.end() && it->second > 0) {
          out.active_annotations.insert(aid);
          --it->second;
        } else {
          out.masked_annotations.insert(aid);
        }
      }
    }
    if (remaining[cls] > 0) {
      const std::string& name = index.classes()[cls];
      throw InfeasibleBudgetError(
          name, "infeasible shot budget for class '" + name + "': " +
                    std::to_string(remaining[cls]) +
                    " annotation(s) short of the required count");
    }
  }

  out.image_ids.assign(selected.begin(), selected.end());
  for (long aid : out.active_annotations)
    out.active_counts[index.annotation(aid).class_id]++;
  return out;
}

void write_finetune_set(const FinetuneSet& set, const DatasetIndex& index,
                        const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "# finetune\tseed=" << set.seed << "\tk=" << set.budget.k << "\trho="
      << (set.budget.rho_infinite() ? std::string("inf")
                                    : std::to_string(set.budget.rho))
      << "\tphase=finetune\n";
  for (long img : set.image_ids) {
    std::vector<long> anns = index.annotations_of(img);
    std::sort(anns.begin(), anns.end());
    write_record_line(out, index, img, anns, &set.masked_annotations);
  }
}

FinetuneSet read_finetune_set(const std::string& path,
                              const DatasetIndex& index) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  FinetuneSet set;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string tok;
      while (ss >> tok) {
        if (tok.rfind("seed=", 0) == 0) set.seed = std::stoull(tok.substr(5));
        if (tok.rfind("k=", 0) == 0) set.budget.k = std::stoi(tok.substr(2));
        if (tok.rfind("rho=", 0) == 0)
          set.budget.rho = tok.substr(4) == "inf" ? ShotBudget::kInfinite
                                                  : std::stoi(tok.substr(4));
      }
      header_seen = true;
      continue;
    }
    auto rec = parse_record_line(line, line_no, path);
    set.image_ids.push_back(rec.image.id);
    // match tuples back to index annotations by class and geometry
    std::vector<long> anns = index.annotations_of(rec.image.id);
    for (const auto& t : rec.tuples) {
      long found = -1;
      for (long aid : anns) {
        const auto& a = index.annotation(aid);
        if (a.class_id == t.class_id && a.bbox.x1 == t.box.x1 &&
            a.bbox.y1 == t.box.y1 && a.bbox.x2 == t.box.x2 &&
            a.bbox.y2 == t.box.y2 && !set.active_annotations.count(aid) &&
            !set.masked_annotations.count(aid)) {
          found = aid;
          break;
        }
      }
      if (found < 0)
        throw DataError(path + ":" + std::to_string(line_no) +
                        ": annotation not present in index");
      (t.masked ? set.masked_annotations : set.active_annotations).insert(found);
    }
  }
  if (!header_seen) throw DataError(path + ": missing finetune header");
  std::sort(set.image_ids.begin(), set.image_ids.end());
  for (long aid : set.active_annotations)
    set.active_counts[index.annotation(aid).class_id]++;
  return set;
}

SupportPool phase1_support_pool(const DatasetIndex& index,
                                const SplitSpec& split) {
  SupportPool pool;
  for (long img : split.train_images) {
    if (!split.phase1_eligible(index, img)) continue;
    for (long aid : index.annotations_of(img)) {
      const auto& a = index.annotation(aid);
      pool[a.class_id].push_back(aid);
    }
  }
  for (auto& [cls, ids] : pool) std::sort(ids.begin(), ids.end());
  return pool;
}

SupportPool finetune_support_pool(const DatasetIndex& index,
                                  const FinetuneSet& set) {
  SupportPool pool;
  for (long aid : set.active_annotations)
    pool[index.annotation(aid).class_id].push_back(aid);
  for (auto& [cls, ids] : pool) std::sort(ids.begin(), ids.end());
  return pool;
}

Episode build_episode(const SupportPool& pool,
                      const std::vector<int>& active_classes,
                      long query_image_id, std::uint64_t seed) {
  Episode ep;
  ep.query_image_id = query_image_id;
  ep.active_classes = active_classes;
  std::sort(ep.active_classes.begin(), ep.active_classes.end());
  auto rng = make_rng(seed, "episode");
  for (int cls : ep.active_classes) {
    auto it = pool.find(cls);
    if (it == pool.end() || it->second.empty())
      throw DataError("empty support pool for class " + std::to_string(cls));
    std::uniform_int_distribution<size_t> dist(0, it->second.size() - 1);
    ep.supports.push_back({cls, it->second[dist(rng)]});
  }
  return ep;
}

const Image& ImageCache::get(long image_id) {
  auto it = cache_.find(image_id);
  if (it != cache_.end()) return it->second;
  Image img = read_ppm(index_->image_path(image_id));
  return cache_.emplace(image_id, std::move(img)).first->second;
}

SupportImage make_support_crop(const DatasetIndex& index,
                               const Annotation& ann, int target_size,
                               ImageCache* cache) {
  const auto& rec = index.image(ann.image_id);
  CropWindow win =
      square_pad_bbox(ann.bbox, ImageDims{rec.width, rec.height});
  Image img;
  const Image* src;
  if (cache) {
    src = &cache->get(ann.image_id);
  } else {
    img = read_ppm(index.image_path(ann.image_id));
    src = &img;
  }
  SupportImage s = extract_support_crop(*src, win, target_size);
  s.class_id = ann.class_id;
  s.annotation_id = ann.id;
  return s;
}

namespace {

struct ShapeSpec {
  int cls;
  double cx, cy, sx, sy;  // center and half extents
  double color[3];
};

// class id -> shape kind; colors carry most of the class signal so the
// k=1 regime stays genuinely harder than k=10
const double kClassColors[5][3] = {{0.85, 0.2, 0.2},
                                   {0.2, 0.4, 0.9},
                                   {0.2, 0.75, 0.3},
                                   {0.9, 0.8, 0.2},
                                   {0.75, 0.3, 0.8}};

bool shape_member(int cls, const ShapeSpec& s, double px, double py) {
  double dx = (px - s.cx) / s.sx;
  double dy = (py - s.cy) / s.sy;
  switch (cls % 5) {
    case 0:  // disk
      return dx * dx + dy * dy <= 1.0;
    case 1:  // filled rectangle
      return std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
    case 2:  // triangle, apex up
      return dy >= -1.0 && dy <= 1.0 && std::abs(dx) <= (dy + 1.0) / 2.0;
    case 3:  // ring
      return dx * dx + dy * dy <= 1.0 && dx * dx + dy * dy >= 0.30;
    default:  // diamond
      return std::abs(dx) + std::abs(dy) <= 1.0;
  }
}

double iou_simple(const BBox& a, const BBox& b) {
  double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace

DatasetIndex generate_synthetic_dataset(const SynthConfig& config,
                                        const std::string& out_dir) {
  if (config.num_classes < 2 || config.num_classes > 5)
    throw DataError("synthetic generator supports 2..5 classes");
  if (config.num_images < 1) throw DataError("need at least one image");
  fs::create_directories(fs::path(out_dir) / "images");

  auto rng = make_rng(config.seed, "synth");
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<std::string> classes;
  const char* kNames[5] = {"disk", "box", "triangle", "ring", "diamond"};
  for (int c = 0; c < config.num_classes; ++c) classes.push_back(kNames[c]);

  std::vector<ImageRecord> images;
  std::vector<Annotation> anns;
  long next_ann = 0;
  const int size = config.image_size;

  for (int i = 0; i < config.num_images; ++i) {
    ImageRecord rec;
    rec.id = i;
    char name[64];
    std::snprintf(name, sizeof(name), "images/img_%05d.ppm", i);
    rec.path = name;
    rec.width = rec.height = size;

    double bg = 0.30 + 0.15 * unit(rng);
    Image img(3, size, size, bg);
    if (config.background_noise > 0) {
      std::uniform_real_distribution<double> noise(-config.background_noise,
                                                   config.background_noise);
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x)
            img.at(ch, y, x) =
                std::clamp(img.at(ch, y, x) + noise(rng), 0.0, 1.0);
    }

    std::uniform_int_distribution<int> n_obj_dist(1, config.max_objects);
    int want = n_obj_dist(rng);
    std::vector<ShapeSpec> placed;
    std::vector<BBox> boxes;
    for (int o = 0; o < want; ++o) {
      bool ok = false;
      for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
        ShapeSpec s;
        std::uniform_int_distribution<int> cls_dist(0, config.num_classes - 1);
        s.cls = cls_dist(rng);
        double smin = size * 0.09, smax = size * 0.18;
        s.sx = smin + (smax - smin) * unit(rng);
        s.sy = smin + (smax - smin) * unit(rng);
        s.cx = s.sx + 1 + unit(rng) * (size - 2 * (s.sx + 1));
        s.cy = s.sy + 1 + unit(rng) * (size - 2 * (s.sy + 1));
        for (int ch = 0; ch < 3; ++ch) {
          double jitter = (unit(rng) - 0.5) * 0.16;
          s.color[ch] = std::clamp(kClassColors[s.cls][ch] + jitter, 0.0, 1.0);
        }
        BBox box{std::floor(s.cx - s.sx), std::floor(s.cy - s.sy),
                 std::ceil(s.cx + s.sx), std::ceil(s.cy + s.sy)};
        box.x1 = std::max(box.x1, 0.0);
        box.y1 = std::max(box.y1, 0.0);
        box.x2 = std::min(box.x2, static_cast<double>(size));
        box.y2 = std::min(box.y2, static_cast<double>(size));
        bool overlaps = false;
        for (const auto& other : boxes)
          if (iou_simple(box, other) > 0.05) overlaps = true;
        if (overlaps) continue;
        placed.push_back(s);
        boxes.push_back(box);
        ok = true;
      }
      // placement failure just yields fewer shapes in this image
    }

    for (size_t p = 0; p < placed.size(); ++p) {
      const auto& s = placed[p];
      const auto& box = boxes[p];
      for (int y = static_cast<int>(box.y1); y < static_cast<int>(box.y2); ++y)
        for (int x = static_cast<int>(box.x1); x < static_cast<int>(box.x2); ++x)
          if (shape_member(s.cls, s, x + 0.5, y + 0.5))
            for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = s.color[ch];
      Annotation a;
      a.id = next_ann++;
      a.image_id = rec.id;
      a.class_id = s.cls;
      a.bbox = box;
      anns.push_back(a);
    }
    write_ppm(img, (fs::path(out_dir) / rec.path).string());
    images.push_back(rec);
  }

  DatasetIndex index(out_dir, classes, images, anns);
  write_index(index, (fs::path(out_dir) / "index.tsv").string());
  return index;
}

}  // namespace fsdet
