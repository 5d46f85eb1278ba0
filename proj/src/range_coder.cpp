#include "lfc/range_coder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include "lfc/errors.hpp"

namespace lfc {

namespace {
constexpr std::uint32_t kTop = 1u << 24;
constexpr int kMaxEscapeBits = 48;
}  // namespace

// ---------------------------------------------------------------------------
// Encoder

void RangeEncoder::shift_low() {
  if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t temp = cache_;
    do {
      if (first_)
        first_ = false;
      else
        out_.push_back(static_cast<std::uint8_t>(temp + carry));
      temp = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

void RangeEncoder::encode(std::uint32_t start, std::uint32_t freq) {
  if (freq == 0 || start + freq > kProbTotal) throw ContractError("range coder: invalid interval");
  const std::uint32_t r = range_ >> kProbBits;
  low_ += static_cast<std::uint64_t>(r) * start;
  range_ = r * freq;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::encode_bits(std::uint32_t value, int nbits) {
  if (nbits < 1 || nbits > 16 || (value >> nbits) != 0) throw ContractError("range coder: invalid bypass bits");
  const std::uint32_t r = range_ >> nbits;
  low_ += static_cast<std::uint64_t>(r) * value;
  range_ = r;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  // Any value in [low, low + range) identifies the stream. range >= 2^24, so
  // one with its low 24 bits zero exists; the decoder reads zeros past the
  // end, so those trailing bytes are dropped.
  constexpr std::uint64_t mask = kTop - 1;
  low_ = (low_ + mask) & ~mask;
  for (int i = 0; i < 5; ++i) shift_low();
  for (int i = 0; i < 4 && !out_.empty() && out_.back() == 0; ++i) out_.pop_back();
  return std::move(out_);
}

// ---------------------------------------------------------------------------
// Decoder

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next();
}

std::uint8_t RangeDecoder::next() {
  if (pos_ < bytes_.size()) return bytes_[pos_++];
  ++overrun_;
  if (overrun_ > 4) throw DecodeError("range decoder: stream truncated", pos_);
  return 0;
}

void RangeDecoder::normalize() {
  while (range_ < kTop) {
    code_ = (code_ << 8) | next();
    range_ <<= 8;
  }
}

std::uint32_t RangeDecoder::target() {
  step_ = range_ >> kProbBits;
  const std::uint32_t v = code_ / step_;
  if (v >= kProbTotal) throw DecodeError("range decoder: code value outside range", pos_);
  return v;
}

void RangeDecoder::consume(std::uint32_t start, std::uint32_t freq) {
  code_ -= step_ * start;
  range_ = step_ * freq;
  normalize();
}

std::uint32_t RangeDecoder::decode_bits(int nbits) {
  if (nbits < 1 || nbits > 16) throw ContractError("range decoder: invalid bypass width");
  const std::uint32_t r = range_ >> nbits;
  const std::uint32_t v = code_ / r;
  if (v >> nbits) throw DecodeError("range decoder: bypass value outside range", pos_);
  code_ -= v * r;
  range_ = r;
  normalize();
  return v;
}

// ---------------------------------------------------------------------------
// Tables

FrequencyTable make_table(std::int64_t offset, std::span<const double> probs) {
  const std::size_t n = probs.size();
  if (n < 2 || n > kProbTotal / 2) throw ContractError("frequency table: unsupported alphabet size");
  double total = 0.0;
  for (double p : probs) total += std::max(p, 0.0);
  const double budget = static_cast<double>(kProbTotal - n);
  std::vector<std::uint32_t> freq(n, 1);
  std::uint32_t used = 0;
  std::size_t best = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = total > 0.0 ? std::max(probs[i], 0.0) / total : 1.0 / static_cast<double>(n);
    freq[i] += static_cast<std::uint32_t>(std::floor(p * budget));
    used += freq[i];
    if (freq[i] > freq[best]) best = i;
  }
  freq[best] += kProbTotal - used;
  FrequencyTable t;
  t.offset = offset;
  t.cdf.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) t.cdf[i + 1] = t.cdf[i] + freq[i];
  return t;
}

namespace {

void put_gamma(RangeEncoder& enc, std::uint64_t n) {
  const int nb = std::bit_width(n);
  for (int i = 1; i < nb; ++i) enc.encode_bits(0, 1);
  for (int i = nb - 1; i >= 0; --i) enc.encode_bits(static_cast<std::uint32_t>((n >> i) & 1u), 1);
}

std::uint64_t get_gamma(RangeDecoder& dec) {
  int zeros = 0;
  while (dec.decode_bits(1) == 0) {
    if (++zeros > kMaxEscapeBits) throw DecodeError("escape code too long", dec.position());
  }
  std::uint64_t n = 1;
  for (int i = 0; i < zeros; ++i) n = (n << 1) | dec.decode_bits(1);
  return n;
}

}  // namespace

void encode_symbol(RangeEncoder& enc, const FrequencyTable& table, std::int64_t value) {
  const std::int64_t idx = value - table.offset;
  const int size = table.size();
  if (idx >= 0 && idx < size) {
    enc.encode(table.cdf[idx], table.freq(static_cast<int>(idx)));
    return;
  }
  enc.encode(table.cdf[size], table.freq(size));
  const bool above = idx >= size;
  enc.encode_bits(above ? 1 : 0, 1);
  put_gamma(enc, static_cast<std::uint64_t>(above ? idx - size + 1 : -idx));
}

std::int64_t decode_symbol(RangeDecoder& dec, const FrequencyTable& table) {
  const std::uint32_t v = dec.target();
  const auto it = std::upper_bound(table.cdf.begin(), table.cdf.end(), v);
  const int idx = static_cast<int>(it - table.cdf.begin()) - 1;
  dec.consume(table.cdf[idx], table.freq(idx));
  if (idx < table.size()) return table.offset + idx;
  const bool above = dec.decode_bits(1) != 0;
  const auto dist = static_cast<std::int64_t>(get_gamma(dec));
  return above ? table.offset + table.size() - 1 + dist : table.offset - dist;
}

double table_cost_bits(const FrequencyTable& table, std::int64_t value) {
  const std::int64_t idx = value - table.offset;
  const int size = table.size();
  const auto cost = [&](int i) { return kProbBits - std::log2(static_cast<double>(table.freq(i))); };
  if (idx >= 0 && idx < size) return cost(static_cast<int>(idx));
  const std::uint64_t dist = static_cast<std::uint64_t>(idx >= size ? idx - size + 1 : -idx);
  return cost(size) + 1.0 + 2.0 * std::bit_width(dist) - 1.0;
}

// ---------------------------------------------------------------------------
// Gaussian tables

const std::array<double, kScaleLevels>& scale_table() {
  static const std::array<double, kScaleLevels> table = [] {
    std::array<double, kScaleLevels> t{};
    const double lo = std::log(kScaleMin), hi = std::log(kScaleMax);
    for (int i = 0; i < kScaleLevels; ++i) t[i] = std::exp(lo + (hi - lo) * i / (kScaleLevels - 1));
    return t;
  }();
  return table;
}

int scale_index(double sigma) {
  const auto& t = scale_table();
  const auto it = std::lower_bound(t.begin(), t.end(), sigma);
  return it == t.end() ? kScaleLevels - 1 : static_cast<int>(it - t.begin());
}

int support_half_width(double sigma) {
  return static_cast<int>(std::ceil(kTailSigmas * scale_table()[scale_index(sigma)])) + 1;
}

std::int64_t round_half_away(double x) { return static_cast<std::int64_t>(std::round(x)); }

double gaussian_bin(double k, double mu, double sigma) {
  const double v = std::abs(k - mu);
  const auto cdf = [](double t) { return 0.5 * std::erfc(-t / std::numbers::sqrt2); };
  return cdf((0.5 - v) / sigma) - cdf((-0.5 - v) / sigma);
}

FrequencyTable gaussian_table(double mu, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(mu) || !std::isfinite(sigma)) {
    throw NumericError("gaussian table: invalid mean or scale");
  }
  const int half = support_half_width(sigma);
  const std::int64_t center = round_half_away(mu);
  std::vector<double> probs(static_cast<std::size_t>(2 * half + 2));
  double mass = 0.0;
  for (int i = 0; i <= 2 * half; ++i) {
    probs[i] = gaussian_bin(static_cast<double>(center - half + i), mu, sigma);
    mass += probs[i];
  }
  probs.back() = std::max(1.0 - mass, 0.0);
  return make_table(center - half, probs);
}

}  // namespace lfc
