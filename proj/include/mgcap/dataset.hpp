#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mgcap/error.hpp"
#include "mgcap/image.hpp"
#include "mgcap/rng.hpp"

namespace mgcap {

enum class Split { Train, Test };

inline std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw Error(ErrorKind::MalformedHeader, "split tag must be train|test, got '" + s + "'");
}

struct ManifestRecord {
  std::string path;  // relative to the manifest directory
  std::size_t label = 0;
  Split split = Split::Train;
};

/// Manifest CSV (`path,label,split`) plus a class-name table stored as `classes.txt`
/// beside it, one name per line.
struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;

  std::size_t num_classes() const { return class_names.size(); }

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [s](const ManifestRecord& r) { return r.split == s; }));
  }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& r : records) {
      if (r.label >= class_names.size())
        throw Error(ErrorKind::LabelOutOfRange, "label " + std::to_string(r.label) + " for " + r.path);
      if (!seen.insert(r.path).second) throw Error(ErrorKind::MalformedHeader, "duplicate path " + r.path);
    }
  }
};

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& csv_path) {
  m.validate();
  {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + csv_path.string());
    out << "path,label,split\n";
    for (const auto& r : m.records) out << r.path << ',' << r.label << ',' << to_string(r.split) << '\n';
  }
  std::ofstream names(csv_path.parent_path() / "classes.txt", std::ios::binary);
  if (!names) throw Error(ErrorKind::IoError, "cannot write classes.txt");
  for (const auto& n : m.class_names) names << n << '\n';
}

inline DatasetManifest read_manifest(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open manifest " + csv_path.string());
  DatasetManifest m;
  std::string line;
  if (!std::getline(in, line) || line != "path,label,split")
    throw Error(ErrorKind::MalformedHeader, "manifest header must be 'path,label,split'");
  std::size_t max_label = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos)
      throw Error(ErrorKind::MalformedHeader, "manifest line " + std::to_string(line_no) + ": expected 3 fields");
    ManifestRecord r;
    r.path = line.substr(0, c1);
    const std::string label = line.substr(c1 + 1, c2 - c1 - 1);
    if (label.empty() || !std::all_of(label.begin(), label.end(), [](char c) { return c >= '0' && c <= '9'; }))
      throw Error(ErrorKind::MalformedHeader, "manifest line " + std::to_string(line_no) + ": bad label");
    r.label = std::stoul(label);
    r.split = parse_split(line.substr(c2 + 1));
    max_label = std::max(max_label, r.label);
    m.records.push_back(std::move(r));
  }
  std::ifstream names(csv_path.parent_path() / "classes.txt");
  if (names) {
    while (std::getline(names, line))
      if (!line.empty()) m.class_names.push_back(line);
  } else {
    for (std::size_t k = 0; k <= max_label && !m.records.empty(); ++k) m.class_names.push_back("class" + std::to_string(k));
  }
  m.validate();
  return m;
}

/// Stratified re-split: within each class, records are Fisher-Yates shuffled by a generator keyed on
/// (seed, class) and the first round(ratio * n) become train. Every class must keep at
/// least one train and one test record.
inline DatasetManifest split(const DatasetManifest& m, double train_ratio, std::uint64_t seed) {
  if (!(train_ratio > 0.0) || !(train_ratio < 1.0))
    throw Error(ErrorKind::RatioOutOfRange, "train ratio must lie in (0, 1)");
  DatasetManifest out = m;
  out.seed = seed;
  for (std::size_t label = 0; label < m.num_classes(); ++label) {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < m.records.size(); ++k)
      if (m.records[k].label == label) idx.push_back(k);
    if (idx.empty()) continue;
    Rng rng = make_rng({seed, label, 0x5b1u});
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
    const auto n_train = static_cast<std::size_t>(std::lround(train_ratio * static_cast<double>(idx.size())));
    if (n_train == 0 || n_train >= idx.size())
      throw Error(ErrorKind::RatioOutOfRange, "ratio " + std::to_string(train_ratio) + " leaves class " +
                                                  std::to_string(label) + " without a train or test sample");
    for (std::size_t k = 0; k < idx.size(); ++k) out.records[idx[k]].split = k < n_train ? Split::Train : Split::Test;
  }
  return out;
}

/// Rotated-texture surrogate dataset: every sample is a texture drawn at a uniformly
/// random global rotation, so class identity is defined only up to rotation.
struct SyntheticSpec {
  std::size_t num_classes = 8;
  std::size_t samples_per_class = 200;
  std::size_t image_size = 64;
  double noise_sigma = 0.05;
  std::uint64_t seed = 1;
};

inline const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names = {"stripes_wide", "stripes_medium", "stripes_fine", "checker_coarse",
                                                 "checker_fine", "rings",          "blobs",        "crosshatch"};
  return names;
}

namespace detail {

constexpr double kTwoPi = 6.283185307179586;

inline double smooth_step_wave(double x) { return 0.5 + 0.5 * std::tanh(3.0 * x); }

}  // namespace detail

/// Renders sample `index` of class `label`; fully determined by (spec, label, index).
inline Image render_synthetic(const SyntheticSpec& spec, std::size_t label, std::size_t index,
                              double* rotation_deg_out = nullptr, const double* rotation_override = nullptr) {
  using detail::kTwoPi;
  if (label >= synthetic_class_names().size()) throw Error(ErrorKind::LabelOutOfRange, "synthetic class index");
  Rng rng = make_rng({spec.seed, label, index, 0x7e47u});
  const double rotation = uniform(rng, 0.0, 360.0);
  const double angle = rotation_override ? *rotation_override : rotation;
  if (rotation_deg_out) *rotation_deg_out = angle;
  const double phase_a = uniform(rng, 0.0, kTwoPi);
  const double phase_b = uniform(rng, 0.0, kTwoPi);
  const double contrast = uniform(rng, 0.7, 1.0);
  const double bias = uniform(rng, -0.1, 0.1);

  const std::size_t s = spec.image_size;
  const double c = 0.5 * static_cast<double>(s - 1);
  const double th = angle * kTwoPi / 360.0;
  const double ct = std::cos(th), st = std::sin(th);

  struct Blob {
    double u, v;
  };
  std::vector<Blob> blobs;
  if (label == 6) {
    const double extent = 0.75 * static_cast<double>(s);
    for (int k = 0; k < 10; ++k) blobs.push_back({uniform(rng, -extent, extent), uniform(rng, -extent, extent)});
  }
  const double ring_cu = uniform(rng, -0.08, 0.08) * static_cast<double>(s);
  const double ring_cv = uniform(rng, -0.08, 0.08) * static_cast<double>(s);

  Image img(s, s, 1);
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t col = 0; col < s; ++col) {
      const double x = static_cast<double>(col) - c;
      const double y = static_cast<double>(r) - c;
      // texture coordinates: image coordinates rotated back by the sample's rotation
      const double u = ct * x - st * y;
      const double v = st * x + ct * y;
      double t = 0.0;
      switch (label) {
        case 0: t = 0.5 + 0.5 * std::sin(kTwoPi * u / 16.0 + phase_a); break;
        case 1: t = 0.5 + 0.5 * std::sin(kTwoPi * u / 9.0 + phase_a); break;
        case 2: t = 0.5 + 0.5 * std::sin(kTwoPi * u / 5.0 + phase_a); break;
        case 3: t = detail::smooth_step_wave(std::sin(kTwoPi * u / 20.0 + phase_a) * std::sin(kTwoPi * v / 20.0 + phase_b)); break;
        case 4: t = detail::smooth_step_wave(std::sin(kTwoPi * u / 10.0 + phase_a) * std::sin(kTwoPi * v / 10.0 + phase_b)); break;
        case 5: {
          const double rr = std::hypot(u - ring_cu, v - ring_cv);
          t = 0.5 + 0.5 * std::sin(kTwoPi * rr / 8.0 + phase_a);
          break;
        }
        case 6: {
          double acc = 0.0;
          for (const auto& b : blobs) {
            const double du = (u - b.u) / 9.0, dv = (v - b.v) / 2.5;
            acc += std::exp(-0.5 * (du * du + dv * dv));
          }
          t = std::min(1.0, acc);
          break;
        }
        default: {
          const double lu = std::cos(kTwoPi * u / 12.0 + phase_a);
          const double lv = std::cos(kTwoPi * v / 12.0 + phase_b);
          t = std::max(std::pow(std::max(lu, 0.0), 8.0), std::pow(std::max(lv, 0.0), 8.0));
          break;
        }
      }
      const double val = 0.5 + bias + contrast * (t - 0.5) + spec.noise_sigma * normal(rng);
      img.at(r, col, 0) = std::clamp(val, 0.0, 1.0);
    }
  }
  return img;
}

/// Writes `<out_dir>/<class>/<index>.pgm`, `manifest.csv` and `classes.txt`.
/// All records are tagged train; use split() to partition.
inline DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.num_classes == 0 || spec.num_classes > synthetic_class_names().size())
    throw Error(ErrorKind::InvalidArgument, "synthetic num_classes must be in [1, 8]");
  if (spec.samples_per_class == 0) throw Error(ErrorKind::InvalidArgument, "samples_per_class must be positive");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.seed = spec.seed;
  m.class_names.assign(synthetic_class_names().begin(),
                       synthetic_class_names().begin() + static_cast<std::ptrdiff_t>(spec.num_classes));
  for (std::size_t label = 0; label < spec.num_classes; ++label) {
    const auto dir = out_dir / m.class_names[label];
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string());
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      std::ostringstream name;
      name << m.class_names[label] << '/';
      name.width(5);
      name.fill('0');
      name << i << ".pgm";
      save_ppm(render_synthetic(spec, label, i), out_dir / name.str());
      m.records.push_back({name.str(), label, Split::Train});
    }
  }
  write_manifest(m, out_dir / "manifest.csv");
  return m;
}

/// Loaded images with labels for one split.
struct LabeledImages {
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return images.size(); }
};

inline LabeledImages load_split(const DatasetManifest& m, const std::filesystem::path& root, Split which) {
  LabeledImages out;
  out.num_classes = m.num_classes();
  for (const auto& r : m.records) {
    if (r.split != which) continue;
    out.images.push_back(load_ppm(root / r.path));
    out.labels.push_back(r.label);
  }
  return out;
}

/// In-memory equivalent of generate_synthetic + split, for experiments that skip disk.
inline std::pair<LabeledImages, LabeledImages> synthetic_in_memory(const SyntheticSpec& spec, double train_ratio,
                                                                   std::uint64_t split_seed) {
  DatasetManifest m;
  m.class_names.assign(synthetic_class_names().begin(),
                       synthetic_class_names().begin() + static_cast<std::ptrdiff_t>(spec.num_classes));
  for (std::size_t label = 0; label < spec.num_classes; ++label)
    for (std::size_t i = 0; i < spec.samples_per_class; ++i)
      m.records.push_back({std::to_string(label) + "/" + std::to_string(i), label, Split::Train});
  const DatasetManifest s = split(m, train_ratio, split_seed);
  std::pair<LabeledImages, LabeledImages> out;
  out.first.num_classes = out.second.num_classes = spec.num_classes;
  std::size_t k = 0;
  for (std::size_t label = 0; label < spec.num_classes; ++label)
    for (std::size_t i = 0; i < spec.samples_per_class; ++i, ++k) {
      // Quantize through the 8-bit encoding so in-memory and on-disk data agree.
      Image img = decode_pnm(encode_pnm(render_synthetic(spec, label, i)));
      auto& dst = s.records[k].split == Split::Train ? out.first : out.second;
      dst.images.push_back(std::move(img));
      dst.labels.push_back(label);
    }
  return out;
}

}  // namespace mgcap
