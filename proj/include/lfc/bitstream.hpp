#pragma once

// LFB1 container. Layout (little-endian):
//
//   "LFB1"  u8 version  u8 layout  u8 channels  u8 lambda_index
//   u16 A  u16 H  u16 W  u16 padded_H  u16 padded_W
//   u8 flags  f64 Q  f64 range_lo  f64 range_hi  u64 model_hash
//   u8 stream_count
//   stream_count x { varint byte_length  u32 crc32  bytes }
//
// Stream 0 carries z-hat, streams 1.. carry the y-hat channel groups.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lfc {

enum class Layout : std::uint8_t { sai = 0, macpi = 1 };

struct BitstreamHeader {
  std::uint8_t version = 1;
  Layout layout = Layout::sai;
  int channels = 1;
  int lambda_index = 0;
  int A = 0, H = 0, W = 0;
  int padded_H = 0, padded_W = 0;
  std::uint8_t flags = 0;
  double Q = 1.0;
  double range_lo = 0.0;
  double range_hi = 1.0;
  std::uint64_t model_hash = 0;

  friend bool operator==(const BitstreamHeader&, const BitstreamHeader&) = default;
};

struct Bitstream {
  BitstreamHeader header;
  std::vector<std::vector<std::uint8_t>> streams;
};

inline constexpr std::uint8_t kBitstreamVersion = 1;

std::vector<std::uint8_t> serialize_bitstream(const Bitstream& bs);
// Throws DecodeError (with byte position) on bad magic, unsupported version,
// truncation, CRC mismatch or trailing bytes.
Bitstream parse_bitstream(std::span<const std::uint8_t> bytes);
// Bytes taken by everything except stream payloads.
std::size_t bitstream_overhead_bytes(const Bitstream& bs);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);
void put_varint(std::vector<std::uint8_t>& out, std::uint64_t v);

}  // namespace lfc
