// Binary checkpoint containers. The plain container round-trips float64
// tensors bit-exactly; the quantized container stores integer codes, a
// per-tensor scale, and an optional prune mask for sparse payloads.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtsc/tensor.hpp"

namespace mtsc {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Plain container, magic "MTSC1": u32 tensor count, then per tensor
// (u32 name length, UTF-8 name, u32 rank, u32 dims[], little-endian f64
// payload). Round trip is bit-exact.
void save_checkpoint(const NamedTensors& tensors, const std::string& path);
NamedTensors load_checkpoint(const std::string& path);

// One tensor of the quantized container. bits=32 stores f32 values verbatim
// (no codes); bits in {4,8,16} stores signed codes at that width, 4-bit codes
// packed two per byte. When a prune mask is present only surviving entries
// are stored, in flat-index order.
struct QuantTensorRecord {
  std::string name;
  Shape shape;
  uint8_t bits = 32;
  double scale = 0.0;
  std::vector<uint8_t> mask;    // ceil(numel/8) bytes, LSB-first; empty = dense
  std::vector<int32_t> codes;   // quantized entries (bits <= 16)
  std::vector<float> raw;       // verbatim entries (bits == 32)

  size_t numel() const { return shape_numel(shape); }
  bool kept(size_t flat_index) const;  // mask bit, true when mask is empty
  std::vector<double> dequantize() const;
};

// Quantized container, magic "MTSCQ": same directory layout as the plain
// container with (bits, scale, mask) sections per tensor.
void save_quant_checkpoint(const std::vector<QuantTensorRecord>& records,
                           const std::string& path);
std::vector<QuantTensorRecord> load_quant_checkpoint(const std::string& path);

// Serialized size in bytes of one record's payload section (mask + entries),
// excluding the name/shape directory overhead. This is the footprint the
// compression cost model charges.
size_t quant_payload_bytes(const QuantTensorRecord& record);

// FNV-1a over the file contents.
uint64_t fnv1a64_file(const std::string& path);

}  // namespace mtsc
