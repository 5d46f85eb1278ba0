#include "lfc/bitstream.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>

#include "lfc/errors.hpp"

namespace lfc {

static_assert(std::endian::native == std::endian::little, "bitstream I/O assumes little-endian host");

namespace {

constexpr char kMagic[4] = {'L', 'F', 'B', '1'};

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Cursor {
 public:
  explicit Cursor(std::span<const std::uint8_t> b) : b_(b) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::uint64_t varint() {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      const auto byte = get<std::uint8_t>();
      v |= static_cast<std::uint64_t>(byte & 0x7F) << shift;
      if (!(byte & 0x80)) return v;
    }
    throw DecodeError("bitstream: malformed varint", pos_);
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw DecodeError("bitstream: truncated", pos_);
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void check_u16(int v, const char* what) {
  if (v < 0 || v > 0xFFFF) throw FormatError(std::string("bitstream: ") + what + " does not fit 16 bits");
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(::crc32(c, bytes.data(), static_cast<uInt>(bytes.size())));
}

void put_varint(std::vector<std::uint8_t>& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<std::uint8_t>(v | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> serialize_bitstream(const Bitstream& bs) {
  const auto& h = bs.header;
  for (auto [v, what] : {std::pair{h.A, "A"}, {h.H, "H"}, {h.W, "W"}, {h.padded_H, "padded H"}, {h.padded_W, "padded W"}})
    check_u16(v, what);
  if (h.channels < 1 || h.channels > 255 || h.lambda_index < 0 || h.lambda_index > 255 || bs.streams.size() > 255) {
    throw FormatError("bitstream: header field out of range");
  }
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint8_t>(out, h.version);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(h.layout));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(h.channels));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(h.lambda_index));
  for (int v : {h.A, h.H, h.W, h.padded_H, h.padded_W}) put<std::uint16_t>(out, static_cast<std::uint16_t>(v));
  put<std::uint8_t>(out, h.flags);
  put<double>(out, h.Q);
  put<double>(out, h.range_lo);
  put<double>(out, h.range_hi);
  put<std::uint64_t>(out, h.model_hash);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(bs.streams.size()));
  for (const auto& s : bs.streams) {
    put_varint(out, s.size());
    put<std::uint32_t>(out, crc32(s));
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

Bitstream parse_bitstream(std::span<const std::uint8_t> bytes) {
  Cursor in(bytes);
  const auto magic = in.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw DecodeError("bitstream: bad magic", 0);
  Bitstream bs;
  auto& h = bs.header;
  h.version = in.get<std::uint8_t>();
  if (h.version != kBitstreamVersion) {
    throw DecodeError("bitstream: unsupported version " + std::to_string(h.version), 4);
  }
  const auto layout = in.get<std::uint8_t>();
  if (layout > 1) throw DecodeError("bitstream: unknown layout", in.pos() - 1);
  h.layout = static_cast<Layout>(layout);
  h.channels = in.get<std::uint8_t>();
  h.lambda_index = in.get<std::uint8_t>();
  h.A = in.get<std::uint16_t>();
  h.H = in.get<std::uint16_t>();
  h.W = in.get<std::uint16_t>();
  h.padded_H = in.get<std::uint16_t>();
  h.padded_W = in.get<std::uint16_t>();
  h.flags = in.get<std::uint8_t>();
  h.Q = in.get<double>();
  h.range_lo = in.get<double>();
  h.range_hi = in.get<double>();
  h.model_hash = in.get<std::uint64_t>();
  if (h.channels < 1 || h.A < 1 || h.H < 1 || h.W < 1 || h.padded_H < h.H || h.padded_W < h.W ||
      !(h.Q > 0.0) || !(h.range_hi > h.range_lo)) {
    throw DecodeError("bitstream: inconsistent header", in.pos());
  }
  const auto count = in.get<std::uint8_t>();
  for (int i = 0; i < count; ++i) {
    const std::uint64_t len = in.varint();
    const auto crc = in.get<std::uint32_t>();
    const std::size_t at = in.pos();
    if (len > bytes.size()) throw DecodeError("bitstream: stream length exceeds file", at);
    const auto payload = in.take(static_cast<std::size_t>(len));
    if (crc32(payload) != crc) {
      throw DecodeError("bitstream: CRC mismatch in stream " + std::to_string(i), at);
    }
    bs.streams.emplace_back(payload.begin(), payload.end());
  }
  if (!in.done()) throw DecodeError("bitstream: trailing bytes", in.pos());
  return bs;
}

std::size_t bitstream_overhead_bytes(const Bitstream& bs) {
  std::size_t payload = 0;
  for (const auto& s : bs.streams) payload += s.size();
  return serialize_bitstream(bs).size() - payload;
}

}  // namespace lfc
