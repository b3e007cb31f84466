#pragma once

// Datasets: IDX ingestion, the seeded synthetic generator, labeled/unlabeled
// splits and epoch-deterministic batching.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "shotvae/errors.hpp"
#include "shotvae/rng.hpp"
#include "shotvae/tensor.hpp"

namespace shotvae {

struct Dataset {
  std::vector<double> inputs;  // row-major, size() x input_dim, entries in [0, 1]
  std::vector<std::size_t> labels;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::size_t image_rows = 0;  // image geometry for IDX/PGM output; rows * cols == input_dim
  std::size_t image_cols = 0;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  std::span<const double> row(std::size_t i) const { return {inputs.data() + i * input_dim, input_dim}; }

  void validate() const {
    if (inputs.size() != labels.size() * input_dim) {
      throw ShapeError("dataset has " + std::to_string(inputs.size()) + " values for " +
                       std::to_string(labels.size()) + " rows of " + std::to_string(input_dim));
    }
    for (auto y : labels) {
      if (y >= num_classes) throw DomainError("label " + std::to_string(y) + " >= K = " + std::to_string(num_classes));
    }
    for (double v : inputs) {
      if (!(v >= 0.0 && v <= 1.0)) throw DomainError("feature " + std::to_string(v) + " outside [0, 1]");
    }
    if (image_rows * image_cols != input_dim) throw ShapeError("image geometry does not match input_dim");
  }

  Dataset subset(const std::vector<std::size_t>& index) const {
    Dataset out;
    out.input_dim = input_dim;
    out.num_classes = num_classes;
    out.image_rows = image_rows;
    out.image_cols = image_cols;
    out.inputs.reserve(index.size() * input_dim);
    out.labels.reserve(index.size());
    for (auto i : index) {
      const auto r = row(i);
      out.inputs.insert(out.inputs.end(), r.begin(), r.end());
      out.labels.push_back(labels[i]);
    }
    return out;
  }

  /// Rows gathered into a [index.size(), input_dim] tensor.
  Tensor rows_tensor(const std::vector<std::size_t>& index) const {
    std::vector<double> flat;
    flat.reserve(index.size() * input_dim);
    for (auto i : index) {
      const auto r = row(i);
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor({index.size(), input_dim}, std::move(flat));
  }

  Tensor all_inputs() const { return Tensor({size(), input_dim}, inputs); }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> c(num_classes, 0);
    for (auto y : labels) ++c[y];
    return c;
  }
};

/// Square geometry when input_dim is a perfect square, otherwise 1 x D.
inline void set_default_geometry(Dataset& ds) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(ds.input_dim))));
  if (side * side == ds.input_dim) {
    ds.image_rows = ds.image_cols = side;
  } else {
    ds.image_rows = 1;
    ds.image_cols = ds.input_dim;
  }
}

/// D_U. Ground-truth labels are carried for diagnostics only and can be read
/// solely through diagnostic_labels(); training code sees features only.
class UnlabeledSet {
 public:
  UnlabeledSet() = default;
  explicit UnlabeledSet(Dataset data) : data_(std::move(data)) {}

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t input_dim() const noexcept { return data_.input_dim; }
  std::size_t num_classes() const noexcept { return data_.num_classes; }
  std::span<const double> row(std::size_t i) const { return data_.row(i); }
  Tensor rows_tensor(const std::vector<std::size_t>& index) const { return data_.rows_tensor(index); }
  Tensor all_inputs() const { return data_.all_inputs(); }

  /// Only for metrics such as KL(q(y|x) || smoothed truth) on D_U.
  const std::vector<std::size_t>& diagnostic_labels() const noexcept { return data_.labels; }

  /// Features with labels attached; for export tools (split), not training.
  const Dataset& as_dataset_for_export() const noexcept { return data_; }

 private:
  Dataset data_;
};

struct Batch {
  Tensor inputs;                                   // [B, input_dim]
  std::optional<std::vector<std::size_t>> labels;  // present iff drawn from D_L
  std::vector<std::size_t> indices;                // rows of the source set

  std::size_t size() const noexcept { return indices.size(); }
};

// ----------------------------------------------------------------------- IDX

class IdxMagicError : public IoError {
 public:
  IdxMagicError(const std::string& path, std::uint32_t expected, std::uint32_t observed)
      : IoError(describe(path, expected, observed)), observed_(observed) {}
  std::uint32_t observed() const noexcept { return observed_; }

 private:
  static std::string describe(const std::string& path, std::uint32_t expected, std::uint32_t observed) {
    std::ostringstream os;
    os << path << ": bad IDX magic 0x" << std::hex;
    os.width(8);
    os.fill('0');
    os << observed << ", expected 0x";
    os.width(8);
    os << expected;
    return os.str();
  }
  std::uint32_t observed_;
};

class IdxTruncatedError : public IoError {
 public:
  using IoError::IoError;
};

class IdxCountMismatchError : public IoError {
 public:
  using IoError::IoError;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& path) {
  if (offset + 4 > buf.size()) throw IdxTruncatedError(path + ": truncated IDX header");
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

inline void write_be32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                              static_cast<char>(v)};
  os.write(b.data(), 4);
}

}  // namespace detail

/// Reads an IDX image/label pair; pixels are scaled by 1/255.
/// `num_classes` = 0 infers K = max(label) + 1 (at least 2).
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::size_t num_classes = 0) {
  using detail::read_be32;
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  if (const auto m = read_be32(img, 0, images_path); m != kIdxImageMagic) {
    throw IdxMagicError(images_path, kIdxImageMagic, m);
  }
  if (const auto m = read_be32(lab, 0, labels_path); m != kIdxLabelMagic) {
    throw IdxMagicError(labels_path, kIdxLabelMagic, m);
  }
  const std::size_t n_img = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t n_lab = read_be32(lab, 4, labels_path);
  if (n_img != n_lab) {
    throw IdxCountMismatchError("IDX count mismatch: " + std::to_string(n_img) + " images in " + images_path +
                                " but " + std::to_string(n_lab) + " labels in " + labels_path);
  }
  const std::size_t dim = rows * cols;
  if (img.size() < 16 + n_img * dim) {
    throw IdxTruncatedError(images_path + ": expected " + std::to_string(16 + n_img * dim) + " bytes, found " +
                            std::to_string(img.size()));
  }
  if (lab.size() < 8 + n_lab) {
    throw IdxTruncatedError(labels_path + ": expected " + std::to_string(8 + n_lab) + " bytes, found " +
                            std::to_string(lab.size()));
  }
  Dataset ds;
  ds.input_dim = dim;
  ds.image_rows = rows;
  ds.image_cols = cols;
  ds.inputs.resize(n_img * dim);
  for (std::size_t i = 0; i < n_img * dim; ++i) ds.inputs[i] = static_cast<double>(img[16 + i]) / 255.0;
  ds.labels.resize(n_lab);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n_lab; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = num_classes ? num_classes : std::max<std::size_t>(2, max_label + 1);
  ds.validate();
  return ds;
}

/// Writes `ds` as an IDX pair, quantizing features to round(255 x).
inline void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw IoError("cannot write IDX files " + images_path + ", " + labels_path);
  detail::write_be32(img, kIdxImageMagic);
  detail::write_be32(img, static_cast<std::uint32_t>(ds.size()));
  detail::write_be32(img, static_cast<std::uint32_t>(ds.image_rows));
  detail::write_be32(img, static_cast<std::uint32_t>(ds.image_cols));
  for (double v : ds.inputs) img.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  detail::write_be32(lab, kIdxLabelMagic);
  detail::write_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (auto y : ds.labels) lab.put(static_cast<char>(static_cast<unsigned char>(y)));
  if (!img || !lab) throw IoError("short write to " + images_path + " / " + labels_path);
}

// ----------------------------------------------------------------- synthetic

/// Class k has template t_k = background + separation on the k-th block of
/// input_dim / K coordinates (templates minus the background are mutually
/// orthogonal). A sample is clamp(t_k + S u + noise, 0, 1) with style
/// u ~ N(0, I_style_dim), a fixed basis S with N(0, style_scale^2 / style_dim)
/// entries, and per-feature noise N(0, noise_sigma^2).
///
/// Templates are sqrt(2 block) * separation apart, so nearest-template
/// classification is exact while ||S u + noise|| < separation * sqrt(block / 2).
struct SynthSpec {
  std::size_t num_classes = 4;
  std::size_t input_dim = 64;
  std::size_t per_class = 100;
  std::size_t style_dim = 4;
  double style_scale = 0.15;
  double noise_sigma = 0.1;
  double separation = 0.3;
  double background = 0.35;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2) throw DomainError("synthetic data needs K >= 2");
    if (input_dim < 4 * num_classes) throw DomainError("synthetic data needs input_dim >= 4 K");
    if (per_class == 0) throw DomainError("per_class must be positive");
    if (noise_sigma < 0.0 || style_scale < 0.0) throw DomainError("noise and style scales must be non-negative");
    if (background < 0.0 || background + separation > 1.0 || separation < 0.0) {
      throw DomainError("templates must lie in [0, 1]");
    }
  }
};

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"generator", "shotvae-synth-v1"}, {"num_classes", s.num_classes}, {"input_dim", s.input_dim},
          {"per_class", s.per_class},        {"style_dim", s.style_dim},     {"style_scale", s.style_scale},
          {"noise_sigma", s.noise_sigma},    {"separation", s.separation},   {"background", s.background},
          {"seed", s.seed}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.per_class = j.at("per_class").get<std::size_t>();
  s.style_dim = j.at("style_dim").get<std::size_t>();
  s.style_scale = j.at("style_scale").get<double>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.separation = j.at("separation").get<double>();
  s.background = j.at("background").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

/// Class templates, K rows of input_dim.
inline std::vector<std::vector<double>> synth_templates(const SynthSpec& spec) {
  spec.validate();
  const std::size_t block = spec.input_dim / spec.num_classes;
  std::vector<std::vector<double>> t(spec.num_classes, std::vector<double>(spec.input_dim, spec.background));
  for (std::size_t k = 0; k < spec.num_classes; ++k)
    for (std::size_t j = k * block; j < (k + 1) * block; ++j) t[k][j] += spec.separation;
  return t;
}

/// Samples are emitted round-robin over classes: row i has label i mod K.
inline Dataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  const auto templates = synth_templates(spec);
  const std::size_t d = spec.input_dim, s = spec.style_dim;
  Rng basis_rng(spec.seed, 1);
  std::vector<double> basis(d * s);
  const double basis_sd = s ? spec.style_scale / std::sqrt(static_cast<double>(s)) : 0.0;
  for (auto& b : basis) b = basis_sd * basis_rng.normal();

  Rng sample_rng(spec.seed, 2);
  Dataset ds;
  ds.input_dim = d;
  ds.num_classes = spec.num_classes;
  set_default_geometry(ds);
  const std::size_t n = spec.per_class * spec.num_classes;
  ds.inputs.resize(n * d);
  ds.labels.resize(n);
  std::vector<double> u(s);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % spec.num_classes;
    ds.labels[i] = k;
    for (auto& v : u) v = sample_rng.normal();
    for (std::size_t j = 0; j < d; ++j) {
      double x = templates[k][j];
      for (std::size_t c = 0; c < s; ++c) x += basis[j * s + c] * u[c];
      if (spec.noise_sigma > 0.0) x += spec.noise_sigma * sample_rng.normal();
      ds.inputs[i * d + j] = std::clamp(x, 0.0, 1.0);
    }
  }
  return ds;
}

// --------------------------------------------------------------------- split

struct SplitSpec {
  std::size_t labeled_count = 100;
  std::uint64_t seed = 0;
  bool stratified = true;
};

struct SplitResult {
  Dataset labeled;
  UnlabeledSet unlabeled;
  std::vector<std::size_t> labeled_indices;    // ascending
  std::vector<std::size_t> unlabeled_indices;  // ascending
};

/// Disjoint labeled/unlabeled partition. Stratified splits give every class
/// floor(n/K) labels, and n mod K classes (chosen by the seed) one more.
inline SplitResult split(const Dataset& ds, const SplitSpec& spec) {
  if (spec.labeled_count > ds.size()) {
    throw DomainError("labeled_count " + std::to_string(spec.labeled_count) + " exceeds dataset size " +
                      std::to_string(ds.size()));
  }
  Rng rng(spec.seed, 0x5b117);
  std::vector<char> is_labeled(ds.size(), 0);
  if (spec.stratified) {
    const std::size_t k = ds.num_classes;
    std::vector<std::vector<std::size_t>> by_class(k);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
    std::vector<std::size_t> quota(k, spec.labeled_count / k);
    std::vector<std::size_t> class_order(k);
    for (std::size_t c = 0; c < k; ++c) class_order[c] = c;
    rng.shuffle(std::span<std::size_t>(class_order));
    for (std::size_t r = 0; r < spec.labeled_count % k; ++r) ++quota[class_order[r]];
    for (std::size_t c = 0; c < k; ++c) {
      if (quota[c] > by_class[c].size()) {
        throw DomainError("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                          " examples, stratified split needs " + std::to_string(quota[c]));
      }
      rng.shuffle(std::span<std::size_t>(by_class[c]));
      for (std::size_t j = 0; j < quota[c]; ++j) is_labeled[by_class[c][j]] = 1;
    }
  } else {
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t j = 0; j < spec.labeled_count; ++j) is_labeled[order[j]] = 1;
  }
  SplitResult out;
  for (std::size_t i = 0; i < ds.size(); ++i) (is_labeled[i] ? out.labeled_indices : out.unlabeled_indices).push_back(i);
  out.labeled = ds.subset(out.labeled_indices);
  out.unlabeled = UnlabeledSet(ds.subset(out.unlabeled_indices));
  return out;
}

// ------------------------------------------------------------------- batches

/// Shuffled order of n rows, fixed by (seed, epoch).
inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed, epoch);
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

namespace detail {

inline std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order, std::size_t batch_size,
                                                   std::size_t min_batch) {
  if (batch_size < 1) throw DomainError("batch_size must be >= 1");
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    if (end - i < min_batch) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace detail

/// One epoch of labeled batches; the last batch may be short.
inline std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                                  std::uint64_t epoch) {
  std::vector<Batch> out;
  for (auto& idx : detail::chunk(epoch_permutation(ds.size(), seed, epoch), batch_size, 1)) {
    Batch b;
    b.inputs = ds.rows_tensor(idx);
    std::vector<std::size_t> y;
    y.reserve(idx.size());
    for (auto i : idx) y.push_back(ds.labels[i]);
    b.labels = std::move(y);
    b.indices = std::move(idx);
    out.push_back(std::move(b));
  }
  return out;
}

/// One epoch of unlabeled batches; a final batch of fewer than 2 rows is
/// dropped so that every batch admits an optimal match.
inline std::vector<Batch> batches(const UnlabeledSet& ds, std::size_t batch_size, std::uint64_t seed,
                                  std::uint64_t epoch) {
  if (batch_size < 2) throw DomainError("unlabeled batch_size must be >= 2");
  std::vector<Batch> out;
  for (auto& idx : detail::chunk(epoch_permutation(ds.size(), seed, epoch), batch_size, 2)) {
    Batch b;
    b.inputs = ds.rows_tensor(idx);
    b.indices = std::move(idx);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace shotvae
