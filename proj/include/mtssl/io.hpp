#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mtssl/data.hpp"
#include "mtssl/error.hpp"
#include "mtssl/geometry.hpp"

// Dataset files:
//   <root>/images/<id>.ppm   8-bit RGB (binary PPM)
//   <root>/masks/<id>.pgm    8-bit class ids, 255 = ignore (binary PGM)
//   <root>/boxes/<id>.txt    one "class x1 y1 x2 y2" record per line, pixels
//   <root>/manifest.txt      sample ids and per-task label flags
namespace mtssl {

namespace fs = std::filesystem;

namespace detail {

inline std::string read_pnm_token(std::istream& is) {
  std::string tok;
  char c;
  while (is.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      tok.push_back(c);
      break;
    }
  }
  while (is.get(c) && !std::isspace(static_cast<unsigned char>(c))) tok.push_back(c);
  return tok;
}

struct PnmData {
  int width = 0, height = 0, channels = 0;
  std::vector<unsigned char> bytes;
};

inline PnmData read_pnm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const std::string magic = read_pnm_token(is);
  PnmData d;
  if (magic == "P6") {
    d.channels = 3;
  } else if (magic == "P5") {
    d.channels = 1;
  } else {
    throw IoError(path.string() + ": unsupported image format");
  }
  try {
    d.width = std::stoi(read_pnm_token(is));
    d.height = std::stoi(read_pnm_token(is));
    if (std::stoi(read_pnm_token(is)) != 255) throw IoError(path.string() + ": maxval must be 255");
  } catch (const std::invalid_argument&) {
    throw IoError(path.string() + ": malformed header");
  }
  d.bytes.resize(static_cast<std::size_t>(d.width) * d.height * d.channels);
  if (!is.read(reinterpret_cast<char*>(d.bytes.data()), static_cast<std::streamsize>(d.bytes.size()))) {
    throw IoError(path.string() + ": truncated pixel data");
  }
  return d;
}

inline void write_pnm(const fs::path& path, const char* magic, int w, int h,
                      const std::vector<unsigned char>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << magic << "\n" << w << " " << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace detail

inline unsigned char quantize(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline void write_image(const fs::path& path, const Image& img) {
  if (img.channels != 3) throw ShapeMismatch("only RGB images are written");
  std::vector<unsigned char> bytes(img.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize(img.data[i]);
  detail::write_pnm(path, "P6", img.width, img.height, bytes);
}

inline Image read_image(const fs::path& path) {
  const auto d = detail::read_pnm(path);
  if (d.channels != 3) throw IoError(path.string() + " is not an RGB image");
  Image img(d.height, d.width, 3);
  for (std::size_t i = 0; i < d.bytes.size(); ++i) img.data[i] = d.bytes[i] / 255.0f;
  return img;
}

inline void write_mask(const fs::path& path, const SegMap& seg) {
  detail::write_pnm(path, "P5", seg.width, seg.height,
                    std::vector<unsigned char>(seg.classes.begin(), seg.classes.end()));
}

inline SegMap read_mask(const fs::path& path) {
  const auto d = detail::read_pnm(path);
  if (d.channels != 1) throw IoError(path.string() + " is not a single-channel mask");
  SegMap s(d.height, d.width);
  s.classes.assign(d.bytes.begin(), d.bytes.end());
  return s;
}

inline void write_boxes(const fs::path& path, const BoxSet& boxes) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  char line[160];
  for (const auto& b : boxes) {
    std::snprintf(line, sizeof line, "%d %.4f %.4f %.4f %.4f\n", b.class_id, b.x1, b.y1, b.x2, b.y2);
    os << line;
  }
  if (!os) throw IoError("write failed for " + path.string());
}

inline BoxSet read_boxes(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  BoxSet out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Box b;
    if (!(ls >> b.class_id >> b.x1 >> b.y1 >> b.x2 >> b.y2)) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed box record");
    }
    out.push_back(b);
  }
  return out;
}

// Manifest text format:
//   mtssl-manifest 1
//   kind <a|b|c|d|e|f>
//   seg_size <n> / det_size <n> / overlap <full|random> / seed <n>
//   samples <n>
//   <id> <has_seg 0|1> <has_det 0|1>      (one line per sample)
inline void write_manifest(const fs::path& path, const AnnotationManifest& m) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "mtssl-manifest 1\n";
  os << "kind " << to_char(m.kind) << "\n";
  os << "seg_size " << m.seg_size << "\n";
  os << "det_size " << m.det_size << "\n";
  os << "overlap " << (m.overlap == Overlap::kFull ? "full" : "random") << "\n";
  os << "seed " << m.seed << "\n";
  os << "observed_overlap " << m.overlap_count() << "\n";
  os << "samples " << m.size() << "\n";
  for (const auto& s : m.samples) os << s.id << " " << s.has_seg << " " << s.has_det << "\n";
  if (!os) throw IoError("write failed for " + path.string());
}

inline AnnotationManifest read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string key;
  is >> key;
  int version = 0;
  if (key != "mtssl-manifest" || !(is >> version) || version != 1) {
    throw IoError(path.string() + ": not a version-1 manifest");
  }
  AnnotationManifest m;
  std::size_t n = 0;
  while (is >> key) {
    if (key == "kind") {
      std::string v;
      is >> v;
      m.kind = parse_scenario_kind(v);
    } else if (key == "seg_size") {
      is >> m.seg_size;
    } else if (key == "det_size") {
      is >> m.det_size;
    } else if (key == "overlap") {
      std::string v;
      is >> v;
      m.overlap = v == "random" ? Overlap::kRandom : Overlap::kFull;
    } else if (key == "seed") {
      is >> m.seed;
    } else if (key == "observed_overlap") {
      std::size_t ignored;
      is >> ignored;
    } else if (key == "samples") {
      is >> n;
      break;
    } else {
      throw IoError(path.string() + ": unknown key '" + key + "'");
    }
  }
  m.samples.resize(n);
  for (auto& s : m.samples) {
    int a = 0, b = 0;
    if (!(is >> s.id >> a >> b)) throw IoError(path.string() + ": truncated sample list");
    s.has_seg = a != 0;
    s.has_det = b != 0;
  }
  return m;
}

struct DatasetSample {
  std::string id;
  Image image;
  SegMap mask;  // empty when the file is missing
  BoxSet boxes;
  bool has_mask = false;
  bool has_boxes = false;
};

struct Dataset {
  fs::path root;
  std::vector<DatasetSample> samples;
};

inline fs::path image_path(const fs::path& root, const std::string& id) {
  return root / "images" / (id + ".ppm");
}
inline fs::path mask_path(const fs::path& root, const std::string& id) {
  return root / "masks" / (id + ".pgm");
}
inline fs::path boxes_path(const fs::path& root, const std::string& id) {
  return root / "boxes" / (id + ".txt");
}

// Loads every sample listed in `ids` (all images under images/ when empty).
inline Dataset load_dataset(const fs::path& root, std::vector<std::string> ids = {}) {
  if (!fs::is_directory(root)) throw IoError("dataset root " + root.string() + " not found");
  if (ids.empty()) {
    if (!fs::is_directory(root / "images")) throw IoError("missing images/ under " + root.string());
    for (const auto& e : fs::directory_iterator(root / "images")) {
      if (e.path().extension() == ".ppm") ids.push_back(e.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
  }
  Dataset ds;
  ds.root = root;
  ds.samples.reserve(ids.size());
  for (const auto& id : ids) {
    DatasetSample s;
    s.id = id;
    s.image = read_image(image_path(root, id));
    if (fs::exists(mask_path(root, id))) {
      s.mask = read_mask(mask_path(root, id));
      s.has_mask = true;
      if (s.mask.width != s.image.width || s.mask.height != s.image.height) {
        throw ShapeMismatch("mask of " + id + " does not match its image");
      }
    }
    if (fs::exists(boxes_path(root, id))) {
      s.boxes = read_boxes(boxes_path(root, id));
      s.has_boxes = true;
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline std::vector<std::string> manifest_ids(const AnnotationManifest& m) {
  std::vector<std::string> ids;
  ids.reserve(m.size());
  for (const auto& s : m.samples) ids.push_back(s.id);
  return ids;
}

}  // namespace mtssl
