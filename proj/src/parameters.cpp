#include "lfc/parameters.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lfc/errors.hpp"

namespace lfc {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian host");

namespace {

constexpr char kMagic[4] = {'L', 'F', 'T', '1'};

template <class T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  void read(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const std::vector<CheckpointRecord>& records) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.value.rank()));
    for (int d : r.value.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : r.value.data()) put<double>(out, v);
  }
  return out;
}

std::vector<CheckpointRecord> parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not an LFT1 checkpoint");
  const auto count = in.get<std::uint32_t>();
  std::vector<CheckpointRecord> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint32_t>();
    if (name_len > 4096) throw FormatError("checkpoint record name too long");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw FormatError("checkpoint record rank too large");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<int>(in.get<std::uint32_t>());
      n *= static_cast<std::size_t>(d);
    }
    if (n > (std::size_t{1} << 28)) throw FormatError("checkpoint record too large");
    std::vector<double> values(n);
    in.read(values.data(), n * sizeof(double));
    records.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  if (!in.done()) throw FormatError("trailing bytes after checkpoint records");
  return records;
}

void write_checkpoint_file(const std::filesystem::path& path,
                           const std::vector<CheckpointRecord>& records) {
  const auto bytes = serialize_checkpoint(records);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<CheckpointRecord> read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tensor& ParameterStore::create(const std::string& name, Tensor init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
  init.set_requires_grad(true);
  index_[name] = entries_.size();
  entries_.push_back(std::make_unique<Entry>(Entry{name, std::move(init)}));
  return entries_.back()->value;
}

Tensor& ParameterStore::at(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return entries_[it->second]->value;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return entries_[it->second]->value;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e->value.zero_grad();
}

std::vector<CheckpointRecord> ParameterStore::records() const {
  std::vector<CheckpointRecord> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back({e->name, Tensor(e->value.shape(), e->value.values())});
  return out;
}

void ParameterStore::assign(const std::vector<CheckpointRecord>& records) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& r : records) by_name[r.name] = &r.value;
  for (auto& e : entries_) {
    const auto it = by_name.find(e->name);
    if (it == by_name.end()) throw ConfigError("checkpoint lacks parameter " + e->name);
    if (it->second->shape() != e->value.shape()) {
      throw ConfigError("checkpoint shape mismatch for " + e->name + ": " +
                        to_string(it->second->shape()) + " vs " + to_string(e->value.shape()));
    }
    e->value.values() = it->second->values();
  }
}

Tensor truncated_normal(const Shape& shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor t(shape);
  for (double& v : t.data()) {
    double z;
    do z = dist(rng);
    while (std::abs(z) > 2.0);
    v = z * stddev;
  }
  return t;
}

}  // namespace lfc
