#pragma once

// Named parameter storage and the LFT1 checkpoint format:
//
//   "LFT1" | u32 record_count | record*
//   record = u32 name_len | name bytes | u32 rank | u32 extent[rank] | f64 value[numel]
//
// All integers and doubles little-endian.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "lfc/tensor.hpp"

namespace lfc {

using Rng = std::mt19937_64;

struct CheckpointRecord {
  std::string name;
  Tensor value;
};

std::vector<std::uint8_t> serialize_checkpoint(const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> parse_checkpoint(const std::vector<std::uint8_t>& bytes);
void write_checkpoint_file(const std::filesystem::path& path,
                           const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint_file(const std::filesystem::path& path);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);

class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  // Registers a trainable tensor. Names must be unique; the returned
  // reference stays valid for the life of the store.
  Tensor& create(const std::string& name, Tensor init);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i]->name; }
  Tensor& tensor(std::size_t i) { return entries_[i]->value; }
  const Tensor& tensor(std::size_t i) const { return entries_[i]->value; }

  std::size_t scalar_count() const;
  void zero_grad();

  std::vector<CheckpointRecord> records() const;
  // Copies values from matching records; every parameter must be present
  // with an identical shape (ConfigError otherwise).
  void assign(const std::vector<CheckpointRecord>& records);

 private:
  struct Entry {
    std::string name;
    Tensor value;
  };
  std::vector<std::unique_ptr<Entry>> entries_;
  std::map<std::string, std::size_t> index_;
};

// Truncated normal (+-2 sigma) with the given standard deviation.
Tensor truncated_normal(const Shape& shape, double stddev, Rng& rng);

}  // namespace lfc
