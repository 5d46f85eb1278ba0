#pragma once

// Byte-oriented range coder (64-bit low, 32-bit range, carry propagation
// through a cached byte) with 16-bit probability precision, plus the
// frequency tables used to drive it.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace lfc {

inline constexpr int kProbBits = 16;
inline constexpr std::uint32_t kProbTotal = 1u << kProbBits;

class RangeEncoder {
 public:
  // Codes the interval [start, start + freq) out of kProbTotal.
  void encode(std::uint32_t start, std::uint32_t freq);
  // Equiprobable bits, at most 16 per call.
  void encode_bits(std::uint32_t value, int nbits);
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  bool first_ = true;  // the leading byte is always zero and is not stored
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> bytes);

  // Cumulative frequency the next symbol's interval must contain. Throws
  // DecodeError when the stream is inconsistent.
  std::uint32_t target();
  void consume(std::uint32_t start, std::uint32_t freq);
  std::uint32_t decode_bits(int nbits);

  std::size_t position() const { return pos_; }
  // Bytes requested past the end of the input (treated as zeros).
  std::size_t overrun() const { return overrun_; }

 private:
  std::uint8_t next();
  void normalize();

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::size_t overrun_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t step_ = 0;
};

// Symbols offset .. offset + size - 1 plus a final escape entry that
// covers everything outside; cdf has size + 2 entries from 0 to kProbTotal
// and every interval is non-empty.
struct FrequencyTable {
  std::int64_t offset = 0;
  std::vector<std::uint32_t> cdf;

  int size() const { return static_cast<int>(cdf.size()) - 2; }
  std::uint32_t freq(int index) const { return cdf[index + 1] - cdf[index]; }
};

// Quantizes probabilities (the last entry is the escape mass) to integer
// frequencies summing to kProbTotal, each at least 1. Deterministic.
FrequencyTable make_table(std::int64_t offset, std::span<const double> probs);

void encode_symbol(RangeEncoder& enc, const FrequencyTable& table, std::int64_t value);
std::int64_t decode_symbol(RangeDecoder& dec, const FrequencyTable& table);

// Ideal code length in bits of `value` under the quantized table, escape
// payload included.
double table_cost_bits(const FrequencyTable& table, std::int64_t value);

// Gaussian bin tables. Scales are indexed into a 64-entry log-spaced table
// from kScaleMin to kScaleMax; the entry at or above sigma sets the support
// half-width ceil(kTailSigmas * s) + 1 around round(mu).
inline constexpr int kScaleLevels = 64;
inline constexpr double kScaleMin = 0.04;
inline constexpr double kScaleMax = 64.0;
inline constexpr double kTailSigmas = 7.0;

const std::array<double, kScaleLevels>& scale_table();
int scale_index(double sigma);
int support_half_width(double sigma);

// P(k - 1/2 <= Y < k + 1/2) for Y ~ N(mu, sigma^2), computed on the tail
// side for accuracy.
double gaussian_bin(double k, double mu, double sigma);

FrequencyTable gaussian_table(double mu, double sigma);

// Round half away from zero, the tie rule used throughout.
std::int64_t round_half_away(double x);

}  // namespace lfc
