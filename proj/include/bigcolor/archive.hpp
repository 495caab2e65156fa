#pragma once

// Tensor archive used for checkpoints and weight files.
//
// Layout (all integers little-endian):
//   magic      8 bytes  "BGCKPT\0\1"
//   version    u32
//   meta_len   u64, followed by meta_len bytes of UTF-8 JSON
//   count      u64
//   count x { name_len u32, name bytes, dtype u8 (0 = f32, 1 = f64),
//             dims 4 x i32 (N, C, H, W), raw element data }
//   crc32      u32 over every preceding byte
//
// Files are written to "<path>.tmp" and renamed into place.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <map>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "bigcolor/tensor.hpp"

namespace bigcolor {

static_assert(std::endian::native == std::endian::little, "archive format assumes a little-endian host");

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Archive {
 public:
  static constexpr char kMagic[8] = {'B', 'G', 'C', 'K', 'P', 'T', '\0', '\1'};
  static constexpr std::uint32_t kVersion = 1;

  enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

  struct Record {
    DType dtype = DType::F32;
    std::array<int, 4> shape{};
    std::vector<unsigned char> bytes;
  };

  nlohmann::json meta = nlohmann::json::object();

  template <typename T>
  void put(const std::string& name, const Tensor<T>& t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    Record r;
    r.dtype = std::is_same_v<T, float> ? DType::F32 : DType::F64;
    r.shape = t.shape();
    r.bytes.resize(t.size() * sizeof(T));
    std::memcpy(r.bytes.data(), t.data(), r.bytes.size());
    if (!records_.count(name)) order_.push_back(name);
    records_[name] = std::move(r);
  }

  bool contains(const std::string& name) const { return records_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }
  const Record& record(const std::string& name) const {
    auto it = records_.find(name);
    if (it == records_.end()) throw ArchiveError("archive: missing tensor '" + name + "'");
    return it->second;
  }

  /// Reads a tensor, converting between f32 and f64 if needed.
  template <typename T>
  Tensor<T> get(const std::string& name) const {
    const Record& r = record(name);
    Tensor<T> t(r.shape);
    if (r.dtype == DType::F32) copy_from<float>(r, t);
    else copy_from<double>(r, t);
    return t;
  }

  std::vector<unsigned char> serialize() const {
    std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
    write_pod(out, kVersion);
    const std::string m = meta.dump();
    write_pod(out, static_cast<std::uint64_t>(m.size()));
    out.insert(out.end(), m.begin(), m.end());
    write_pod(out, static_cast<std::uint64_t>(order_.size()));
    for (const auto& name : order_) {
      const Record& r = records_.at(name);
      write_pod(out, static_cast<std::uint32_t>(name.size()));
      out.insert(out.end(), name.begin(), name.end());
      write_pod(out, static_cast<std::uint8_t>(r.dtype));
      for (int d : r.shape) write_pod(out, static_cast<std::int32_t>(d));
      out.insert(out.end(), r.bytes.begin(), r.bytes.end());
    }
    write_pod(out, crc(out.data(), out.size()));
    return out;
  }

  static Archive deserialize(const std::vector<unsigned char>& buf) {
    if (buf.size() < sizeof(kMagic) + 4 + 8 + 8 + 4) throw ArchiveError("archive: file truncated");
    if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) throw ArchiveError("archive: bad magic (not a checkpoint)");
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
    Reader rd{buf, sizeof(kMagic), buf.size() - 4};
    const auto version = rd.pod<std::uint32_t>();
    if (version != kVersion)
      throw ArchiveError("archive: unsupported version " + std::to_string(version) + " (expected " +
                         std::to_string(kVersion) + ")");
    if (crc(buf.data(), buf.size() - 4) != stored_crc) throw ArchiveError("archive: checksum mismatch (corrupt or truncated file)");
    Archive a;
    const auto mlen = rd.pod<std::uint64_t>();
    const auto m = rd.bytes(mlen);
    try {
      a.meta = nlohmann::json::parse(m.begin(), m.end());
    } catch (const nlohmann::json::exception& e) {
      throw ArchiveError(std::string("archive: corrupt metadata: ") + e.what());
    }
    const auto count = rd.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto nlen = rd.pod<std::uint32_t>();
      const auto nb = rd.bytes(nlen);
      std::string name(nb.begin(), nb.end());
      Record r;
      const auto dt = rd.pod<std::uint8_t>();
      if (dt > 1) throw ArchiveError("archive: unknown dtype for '" + name + "'");
      r.dtype = static_cast<DType>(dt);
      std::uint64_t elems = 1;
      for (auto& d : r.shape) {
        d = rd.pod<std::int32_t>();
        if (d < 0) throw ArchiveError("archive: negative dimension for '" + name + "'");
        elems *= static_cast<std::uint64_t>(d);
      }
      r.bytes = rd.bytes(elems * (r.dtype == DType::F32 ? 4 : 8));
      if (a.records_.count(name)) throw ArchiveError("archive: duplicate tensor '" + name + "'");
      a.order_.push_back(name);
      a.records_[name] = std::move(r);
    }
    if (rd.pos != rd.end) throw ArchiveError("archive: trailing bytes");
    return a;
  }

  void save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw ArchiveError("archive: cannot write " + tmp.string());
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      if (!out) throw ArchiveError("archive: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

  static Archive load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArchiveError("archive: cannot open " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(buf);
  }

  static std::uint32_t crc(const unsigned char* p, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    while (n > 0) {
      const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
      c = crc32(c, p, chunk);
      p += chunk;
      n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
  }

 private:
  template <typename U>
  static void write_pod(std::vector<unsigned char>& out, U v) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    out.insert(out.end(), b, b + sizeof(U));
  }

  struct Reader {
    const std::vector<unsigned char>& buf;
    std::size_t pos, end;
    template <typename U>
    U pod() {
      if (end - pos < sizeof(U)) throw ArchiveError("archive: file truncated");
      U v;
      std::memcpy(&v, buf.data() + pos, sizeof(U));
      pos += sizeof(U);
      return v;
    }
    std::vector<unsigned char> bytes(std::uint64_t n) {
      if (end - pos < n) throw ArchiveError("archive: file truncated");
      std::vector<unsigned char> out(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                                     buf.begin() + static_cast<std::ptrdiff_t>(pos + n));
      pos += n;
      return out;
    }
  };

  template <typename Src, typename T>
  static void copy_from(const Record& r, Tensor<T>& t) {
    if (r.bytes.size() != t.size() * sizeof(Src)) throw ArchiveError("archive: size mismatch");
    if constexpr (std::is_same_v<Src, T>) {
      std::memcpy(t.data(), r.bytes.data(), r.bytes.size());
    } else {
      std::vector<Src> tmp(t.size());
      std::memcpy(tmp.data(), r.bytes.data(), r.bytes.size());
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(tmp[i]);
    }
  }

  std::vector<std::string> order_;
  std::map<std::string, Record> records_;
};

/// FNV-1a 64 of a file's bytes, hex encoded; used as the checkpoint id.
inline std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArchiveError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace bigcolor
