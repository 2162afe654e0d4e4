#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include "fattack/anchornet/model.hpp"
#include "fattack/error.hpp"

namespace fattack::anchornet {

// FAW1 layout, all integers little-endian u32:
//   "FAW1" | header_bytes | header | data
//   header = record_count, then per record: name_len, name, rank, dims[rank]
//   data   = every tensor's values as little-endian IEEE-754 doubles, in header order

inline constexpr char kWeightsMagic[4] = {'F', 'A', 'W', '1'};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64(const char* what) {
    need(8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("weights file truncated while reading ") + what);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_weights(const DetectorModel& model) {
  std::string header;
  detail::put_u32(header, static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    detail::put_u32(header, static_cast<std::uint32_t>(p.name.size()));
    header += p.name;
    detail::put_u32(header, static_cast<std::uint32_t>(p.value->rank()));
    for (auto d : p.value->shape()) detail::put_u32(header, static_cast<std::uint32_t>(d));
  }
  std::string out(kWeightsMagic, 4);
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (const auto& p : model.parameters()) {
    for (double v : p.value->data()) detail::put_f64(out, v);
  }
  return out;
}

/// Parses FAW1 bytes against the tensors `config` requires. Fails without
/// producing a model on any mismatch.
inline DetectorModel decode_weights(const DetectorConfig& config, const std::string& bytes) {
  config.validate();
  detail::Reader r(bytes);
  if (r.str(4, "magic") != std::string(kWeightsMagic, 4)) throw FormatError("bad magic: not a FAW1 weights file");
  const std::uint32_t header_bytes = r.u32("header length");
  const std::size_t header_end = r.pos() + header_bytes;
  const std::uint32_t count = r.u32("record count");

  const auto layout = parameter_layout(config);
  std::vector<std::pair<std::string, Shape>> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32("name length");
    std::string name = r.str(len, "tensor name");
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw FormatError("tensor '" + name + "' has invalid rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32("dimension"));
    records.emplace_back(std::move(name), std::move(shape));
  }
  if (r.pos() != header_end) throw FormatError("weights header length does not match its records");

  for (const auto& [name, shape] : records) {
    const auto it = std::find_if(layout.begin(), layout.end(), [&](const auto& l) { return l.first == name; });
    if (it == layout.end()) throw FormatError("unknown tensor '" + name + "' in weights file");
    if (it->second != shape) {
      throw FormatError("tensor '" + name + "' has shape " + shape_string(shape) + ", config expects " +
                        shape_string(it->second));
    }
  }
  for (const auto& [name, shape] : layout) {
    const auto n = std::count_if(records.begin(), records.end(), [&](const auto& rec) { return rec.first == name; });
    if (n != 1) throw FormatError("weights file must contain tensor '" + name + "' exactly once");
  }

  std::vector<NamedTensor> loaded;
  for (const auto& [name, shape] : records) {
    Tensor t(shape);
    for (auto& v : t.data()) v = r.f64("tensor data");
    loaded.push_back({name, std::make_shared<const Tensor>(std::move(t))});
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after weights data");

  std::vector<NamedTensor> ordered;
  for (const auto& [name, shape] : layout) {
    for (auto& l : loaded) {
      if (l.name == name) ordered.push_back(l);
    }
  }
  return DetectorModel(config, std::move(ordered));
}

inline void save_weights(const DetectorModel& model, const std::filesystem::path& path) {
  const std::string bytes = encode_weights(model);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw UsageError("failed writing '" + path.string() + "'");
}

inline DetectorModel load_weights(const DetectorConfig& config, const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot open weights file '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_weights(config, bytes);
}

}  // namespace fattack::anchornet
