#pragma once

// Binary checkpoint:
//   "MGCAP1"
//   per record: u32 name length, name bytes, u8 dtype (1 = f32), u32 rank, u32 dims[rank], f32 payload
//   u32 CRC32 of every preceding byte
// All integers and floats little-endian.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mgcap/error.hpp"
#include "mgcap/tensor.hpp"

namespace mgcap {

inline constexpr char kCheckpointMagic[] = "MGCAP1";
inline constexpr std::uint8_t kDtypeF32 = 1;

struct CheckpointRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  friend bool operator==(const CheckpointRecord&, const CheckpointRecord&) = default;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<unsigned char>(v >> (8 * k)));
}

inline std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; checkpoints stay far below 4 GiB but chunk anyway.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

class ByteCursor {
 public:
  explicit ByteCursor(std::span<const unsigned char> b) : b_(b) {}

  std::size_t remaining() const { return b_.size() - pos_; }

  std::span<const unsigned char> take(std::size_t n) {
    if (n > remaining()) throw Error(ErrorKind::CorruptCheckpoint, "truncated record");
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32() {
    const auto s = take(4);
    return static_cast<std::uint32_t>(s[0]) | static_cast<std::uint32_t>(s[1]) << 8 |
           static_cast<std::uint32_t>(s[2]) << 16 | static_cast<std::uint32_t>(s[3]) << 24;
  }

 private:
  std::span<const unsigned char> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(std::span<const CheckpointRecord> records) {
  std::vector<unsigned char> out(kCheckpointMagic, kCheckpointMagic + 6);
  for (const auto& r : records) {
    std::size_t n = 1;
    for (auto d : r.dims) n *= d;
    if (n != r.data.size()) throw Error(ErrorKind::ShapeMismatch, "record " + r.name + " payload does not match dims");
    detail::put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    out.push_back(kDtypeF32);
    detail::put_u32(out, static_cast<std::uint32_t>(r.dims.size()));
    for (auto d : r.dims) detail::put_u32(out, d);
    const auto* p = reinterpret_cast<const unsigned char*>(r.data.data());
    out.insert(out.end(), p, p + r.data.size() * sizeof(float));
  }
  detail::put_u32(out, detail::crc32_of(out));
  return out;
}

inline std::vector<CheckpointRecord> decode_checkpoint(std::span<const unsigned char> bytes) {
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kCheckpointMagic, 6) != 0)
    throw Error(ErrorKind::CorruptCheckpoint, "bad magic");
  const auto body = bytes.first(bytes.size() - 4);
  detail::ByteCursor tail(bytes.last(4));
  if (tail.u32() != detail::crc32_of(body)) throw Error(ErrorKind::CorruptCheckpoint, "CRC mismatch");

  detail::ByteCursor cur(body.subspan(6));
  std::vector<CheckpointRecord> out;
  while (cur.remaining() > 0) {
    CheckpointRecord r;
    const auto name = cur.take(cur.u32());
    r.name.assign(name.begin(), name.end());
    if (cur.take(1)[0] != kDtypeF32) throw Error(ErrorKind::CorruptCheckpoint, "unsupported dtype in " + r.name);
    const std::uint32_t rank = cur.u32();
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      r.dims.push_back(cur.u32());
      n *= r.dims.back();
    }
    if (n > cur.remaining() / sizeof(float)) throw Error(ErrorKind::CorruptCheckpoint, "truncated payload in " + r.name);
    const auto payload = cur.take(n * sizeof(float));
    r.data.resize(n);
    std::memcpy(r.data.data(), payload.data(), payload.size());
    out.push_back(std::move(r));
  }
  return out;
}

/// Writes to a sibling temporary and renames, so readers never see a partial file.
inline void save_checkpoint(const std::filesystem::path& path, std::span<const CheckpointRecord> records) {
  const auto bytes = encode_checkpoint(records);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorKind::IoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::IoError, "rename to " + path.string() + " failed: " + ec.message());
}

inline std::vector<CheckpointRecord> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

inline CheckpointRecord to_record(const std::string& name, const Tensor& t) {
  CheckpointRecord r{name, {}, {}};
  for (auto d : t.shape) r.dims.push_back(static_cast<std::uint32_t>(d));
  r.data.reserve(t.size());
  for (double v : t.values) r.data.push_back(static_cast<float>(v));
  return r;
}

/// Rounds every entry to the nearest float, i.e. to what a checkpoint can hold.
inline void round_to_storage(Tensor& t) {
  for (double& v : t.values) v = static_cast<double>(static_cast<float>(v));
}

/// Copies a record into `t`; names and shapes must agree exactly.
inline void from_record(const CheckpointRecord& r, const std::string& name, Tensor& t) {
  bool same = r.dims.size() == t.shape.size();
  for (std::size_t k = 0; same && k < r.dims.size(); ++k) same = r.dims[k] == t.shape[k];
  if (!same) {
    std::vector<std::size_t> got(r.dims.begin(), r.dims.end());
    throw Error(ErrorKind::CheckpointMismatch,
                name + ": checkpoint shape " + shape_string(got) + " vs model " + shape_string(t.shape));
  }
  for (std::size_t k = 0; k < t.size(); ++k) t.values[k] = static_cast<double>(r.data[k]);
}

/// Loads `params` by name. Records under `extra_prefix` are ignored; anything else
/// missing or unexpected is a mismatch.
inline void restore_parameters(std::span<const CheckpointRecord> records, std::span<const NamedTensor> params,
                               const std::string& extra_prefix = "state.") {
  std::map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : records) {
    if (r.name.rfind(extra_prefix, 0) == 0) continue;
    by_name[r.name] = &r;
  }
  for (const auto& p : params) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end()) throw Error(ErrorKind::CheckpointMismatch, "checkpoint lacks parameter " + p.name);
    from_record(*it->second, p.name, *p.tensor);
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw Error(ErrorKind::CheckpointMismatch, "checkpoint has unexpected parameter " + by_name.begin()->first);
}

}  // namespace mgcap
