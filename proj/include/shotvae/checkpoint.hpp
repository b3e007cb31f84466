#pragma once

// Binary checkpoints.
//
//   "SHOT" | u32 version | record*          (records run to end of file)
//   record = u32 name_len | name | u32 rank | u64 dims[rank] | f64 payload[prod(dims)]
//
// All integers and floats are little-endian. Model tensors use their
// parameter names; optimizer state is stored as "opt.velocity.<name>",
// the model shape as "meta.model" = [input_dim, K, z_dim, hidden, decoder_var]
// and the completed epoch as "meta.epoch".

#include <bit>
#include <filesystem>
#include <span>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "shotvae/errors.hpp"
#include "shotvae/model.hpp"
#include "shotvae/tensor.hpp"

namespace shotvae {

inline constexpr char kCheckpointMagic[4] = {'S', 'H', 'O', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointMagicError : public IoError {
 public:
  using IoError::IoError;
};
class CheckpointVersionError : public IoError {
 public:
  using IoError::IoError;
};
class CheckpointTruncatedError : public IoError {
 public:
  using IoError::IoError;
};

struct Checkpoint {
  ModelParams params;
  std::map<std::string, Tensor> velocity;  // keyed by parameter name
  std::size_t epoch = 0;
};

namespace ckpt_detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

inline void put_tensor(std::string& out, const std::string& name, const Shape& shape, std::span<const double> vals) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put<std::uint64_t>(out, d);
  out.append(reinterpret_cast<const char*>(vals.data()), vals.size() * sizeof(double));
}

class Reader {
 public:
  Reader(std::vector<char> buf, std::string path) : buf_(std::move(buf)), path_(std::move(path)) {}

  bool done() const noexcept { return pos_ == buf_.size(); }

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::vector<double> doubles(std::size_t n, const char* what) {
    if (n > (buf_.size() - pos_) / sizeof(double)) need(n * sizeof(double), what);
    std::vector<double> v(n);
    std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (n > buf_.size() - pos_) {
      throw CheckpointTruncatedError(path_ + ": truncated checkpoint while reading " + what + " at byte " +
                                     std::to_string(pos_));
    }
  }

  std::vector<char> buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  using namespace ckpt_detail;
  std::string out(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const ModelConfig& mc = ck.params.config();
  const std::vector<double> meta{static_cast<double>(mc.input_dim), static_cast<double>(mc.num_classes),
                                 static_cast<double>(mc.z_dim), static_cast<double>(mc.hidden), mc.decoder_var};
  put_tensor(out, "meta.model", {meta.size()}, meta);
  const double epoch = static_cast<double>(ck.epoch);
  put_tensor(out, "meta.epoch", {}, std::span<const double>(&epoch, 1));
  for (const auto& [name, t] : ck.params.entries()) put_tensor(out, name, t.shape(), t.values());
  for (const auto& [name, t] : ck.velocity) put_tensor(out, "opt.velocity." + name, t.shape(), t.values());

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint " + tmp);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path);
  Reader r({std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()}, path);

  if (r.bytes(4, "magic") != std::string(kCheckpointMagic, 4)) {
    throw CheckpointMagicError(path + ": not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError(path + ": checkpoint format version " + std::to_string(version) +
                                 " is not supported by this build (expects " + std::to_string(kCheckpointVersion) +
                                 "); re-save it with a matching shotvae release or retrain");
  }

  std::vector<std::pair<std::string, Tensor>> tensors;
  while (!r.done()) {
    const auto name_len = r.get<std::uint32_t>("name length");
    std::string name = r.bytes(name_len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>("dims");
      if (d == 0) throw CheckpointTruncatedError(path + ": tensor " + name + " has a zero dimension");
      n *= d;
    }
    tensors.emplace_back(std::move(name), Tensor(std::move(shape), r.doubles(n, "payload")));
  }

  std::map<std::string, Tensor> by_name(tensors.begin(), tensors.end());
  const auto meta = by_name.find("meta.model");
  if (meta == by_name.end() || meta->second.size() != 5) throw IoError(path + ": checkpoint lacks meta.model");
  const auto m = meta->second.to_vector();
  ModelConfig mc;
  mc.input_dim = static_cast<std::size_t>(m[0]);
  mc.num_classes = static_cast<std::size_t>(m[1]);
  mc.z_dim = static_cast<std::size_t>(m[2]);
  mc.hidden = static_cast<std::size_t>(m[3]);
  mc.decoder_var = m[4];
  mc.validate();

  Checkpoint ck;
  ck.params = ModelParams(mc);
  if (auto e = by_name.find("meta.epoch"); e != by_name.end()) ck.epoch = static_cast<std::size_t>(e->second.item());

  // Parameters keep the canonical registration order of init_params.
  Rng dummy;
  const ModelParams layout = init_params(mc, dummy);
  for (const auto& [name, ref] : layout.entries()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError(path + ": checkpoint lacks parameter " + name);
    if (it->second.shape() != ref.shape()) {
      throw ShapeError(path + ": parameter " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                       shape_str(ref.shape()));
    }
    ck.params.add(name, Tensor(it->second.shape(), it->second.to_vector(), true));
  }
  const std::string vprefix = "opt.velocity.";
  for (const auto& [name, t] : by_name)
    if (name.rfind(vprefix, 0) == 0) ck.velocity.emplace(name.substr(vprefix.size()), t);
  return ck;
}

}  // namespace shotvae
