#include "mtsc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mtsc {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace {

constexpr char kMagicPlain[5] = {'M', 'T', 'S', 'C', '1'};
constexpr char kMagicQuant[5] = {'M', 'T', 'S', 'C', 'Q'};

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error("checkpoint " + path + ": " + what);
}

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail(path, "truncated file");
  return v;
}

void write_header(std::ofstream& out, const char* magic, uint32_t count) {
  out.write(magic, 5);
  write_pod(out, count);
}

uint32_t read_header(std::ifstream& in, const char* magic,
                     const std::string& path, const char* other_magic,
                     const char* other_hint) {
  char got[5];
  in.read(got, 5);
  if (!in) fail(path, "truncated file");
  if (std::memcmp(got, magic, 5) != 0) {
    if (std::memcmp(got, other_magic, 5) == 0) fail(path, other_hint);
    fail(path, "bad magic");
  }
  return read_pod<uint32_t>(in, path);
}

void write_name_shape(std::ofstream& out, const std::string& name,
                      const Shape& shape) {
  write_pod(out, uint32_t(name.size()));
  out.write(name.data(), std::streamsize(name.size()));
  write_pod(out, uint32_t(shape.size()));
  for (size_t d : shape) write_pod(out, uint32_t(d));
}

void read_name_shape(std::ifstream& in, const std::string& path,
                     std::string& name, Shape& shape) {
  uint32_t name_len = read_pod<uint32_t>(in, path);
  name.resize(name_len);
  in.read(name.data(), name_len);
  if (!in) fail(path, "truncated file");
  uint32_t rank = read_pod<uint32_t>(in, path);
  if (rank == 0 || rank > 2) fail(path, "bad rank " + std::to_string(rank));
  shape.clear();
  for (uint32_t i = 0; i < rank; ++i)
    shape.push_back(read_pod<uint32_t>(in, path));
}

size_t count_kept(const QuantTensorRecord& r) {
  if (r.mask.empty()) return r.numel();
  size_t kept = 0;
  for (size_t i = 0; i < r.numel(); ++i) kept += r.kept(i) ? 1 : 0;
  return kept;
}

}  // namespace

void save_checkpoint(const NamedTensors& tensors, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  write_header(out, kMagicPlain, uint32_t(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_name_shape(out, name, t.shape());
    out.write(reinterpret_cast<const char*>(t.values().data()),
              std::streamsize(t.numel() * sizeof(double)));
  }
  if (!out) fail(path, "write failure");
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  uint32_t count = read_header(in, kMagicPlain, path, kMagicQuant,
                               "quantized container; use the quantized loader");
  NamedTensors out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    std::string name;
    Shape shape;
    read_name_shape(in, path, name, shape);
    std::vector<double> data(shape_numel(shape));
    in.read(reinterpret_cast<char*>(data.data()),
            std::streamsize(data.size() * sizeof(double)));
    if (!in) fail(path, "truncated payload for '" + name + "'");
    out.emplace_back(std::move(name),
                     Tensor::from_values(shape, std::move(data)));
  }
  return out;
}

bool QuantTensorRecord::kept(size_t flat_index) const {
  if (mask.empty()) return true;
  return (mask[flat_index / 8] >> (flat_index % 8)) & 1u;
}

std::vector<double> QuantTensorRecord::dequantize() const {
  std::vector<double> out(numel(), 0.0);
  size_t k = 0;
  for (size_t i = 0; i < out.size(); ++i) {
    if (!kept(i)) continue;
    out[i] = bits == 32 ? double(raw[k]) : double(codes[k]) * scale;
    ++k;
  }
  return out;
}

size_t quant_payload_bytes(const QuantTensorRecord& record) {
  size_t kept = count_kept(record);
  return record.mask.size() + (kept * record.bits + 7) / 8;
}

void save_quant_checkpoint(const std::vector<QuantTensorRecord>& records,
                           const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  write_header(out, kMagicQuant, uint32_t(records.size()));
  for (const auto& r : records) {
    if (r.bits != 4 && r.bits != 8 && r.bits != 16 && r.bits != 32)
      fail(path, "unsupported bit width " + std::to_string(r.bits));
    size_t kept = count_kept(r);
    size_t stored = r.bits == 32 ? r.raw.size() : r.codes.size();
    if (stored != kept)
      fail(path, "'" + r.name + "' stores " + std::to_string(stored) +
                     " entries for " + std::to_string(kept) + " kept slots");
    if (!r.mask.empty() && r.mask.size() != (r.numel() + 7) / 8)
      fail(path, "'" + r.name + "' mask size mismatch");

    write_name_shape(out, r.name, r.shape);
    write_pod(out, r.bits);
    write_pod(out, r.scale);
    write_pod(out, uint8_t(r.mask.empty() ? 0 : 1));
    out.write(reinterpret_cast<const char*>(r.mask.data()),
              std::streamsize(r.mask.size()));

    if (r.bits == 32) {
      out.write(reinterpret_cast<const char*>(r.raw.data()),
                std::streamsize(r.raw.size() * sizeof(float)));
    } else if (r.bits == 16) {
      for (int32_t c : r.codes) write_pod(out, int16_t(c));
    } else if (r.bits == 8) {
      for (int32_t c : r.codes) write_pod(out, int8_t(c));
    } else {  // two 4-bit two's-complement nibbles per byte, low nibble first
      for (size_t i = 0; i < r.codes.size(); i += 2) {
        uint8_t lo = uint8_t(r.codes[i]) & 0x0f;
        uint8_t hi =
            i + 1 < r.codes.size() ? uint8_t(r.codes[i + 1]) & 0x0f : 0;
        write_pod(out, uint8_t(lo | (hi << 4)));
      }
    }
  }
  if (!out) fail(path, "write failure");
}

std::vector<QuantTensorRecord> load_quant_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  uint32_t count = read_header(in, kMagicQuant, path, kMagicPlain,
                               "plain container; use the plain loader");
  std::vector<QuantTensorRecord> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    QuantTensorRecord r;
    read_name_shape(in, path, r.name, r.shape);
    r.bits = read_pod<uint8_t>(in, path);
    if (r.bits != 4 && r.bits != 8 && r.bits != 16 && r.bits != 32)
      fail(path, "unsupported bit width " + std::to_string(r.bits));
    r.scale = read_pod<double>(in, path);
    if (read_pod<uint8_t>(in, path)) {
      r.mask.resize((r.numel() + 7) / 8);
      in.read(reinterpret_cast<char*>(r.mask.data()),
              std::streamsize(r.mask.size()));
      if (!in) fail(path, "truncated mask for '" + r.name + "'");
    }
    size_t kept = count_kept(r);
    if (r.bits == 32) {
      r.raw.resize(kept);
      in.read(reinterpret_cast<char*>(r.raw.data()),
              std::streamsize(kept * sizeof(float)));
      if (!in) fail(path, "truncated payload for '" + r.name + "'");
    } else if (r.bits == 16) {
      for (size_t k = 0; k < kept; ++k)
        r.codes.push_back(read_pod<int16_t>(in, path));
    } else if (r.bits == 8) {
      for (size_t k = 0; k < kept; ++k)
        r.codes.push_back(read_pod<int8_t>(in, path));
    } else {
      for (size_t k = 0; k < kept; k += 2) {
        uint8_t byte = read_pod<uint8_t>(in, path);
        auto extend = [](uint8_t nib) {
          return int32_t(nib & 0x08 ? int8_t(nib | 0xf0) : int8_t(nib));
        };
        r.codes.push_back(extend(byte & 0x0f));
        if (k + 1 < kept) r.codes.push_back(extend(byte >> 4));
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  uint64_t h = 14695981039346656037ull;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= uint8_t(buf[i]);
      h *= 1099511628211ull;
    }
    if (!in) break;
  }
  return h;
}

}  // namespace mtsc
