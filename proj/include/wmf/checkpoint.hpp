#pragma once

// Binary checkpoint container.
//
// Layout (little-endian): magic "WMFK", u32 version, u32 entry count, then per
// entry: u16 name length, UTF-8 name, u8 dtype, u8 rank, u32 dims[rank], raw
// values. dtype codes: 0 = f32, 1 = f64, 2 = u8 bytes, 3 = i64.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wmf/tensor.hpp"

namespace wmf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class EntryType : std::uint8_t { F32 = 0, F64 = 1, Bytes = 2, I64 = 3 };

struct CheckpointEntry {
  std::string name;
  EntryType type = EntryType::F32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> raw;  // little-endian values
};

class CheckpointFile {
 public:
  void put_tensor(const std::string& name, const Tensor& t);
  void put_bytes(const std::string& name, const std::string& bytes);
  void put_i64(const std::string& name, const std::vector<std::int64_t>& values);

  bool contains(const std::string& name) const;
  const CheckpointEntry& entry(const std::string& name) const;
  // Copies values into `target`, which must have the stored shape and dtype.
  void load_into(const std::string& name, Tensor& target) const;
  Tensor tensor(const std::string& name) const;
  std::string bytes(const std::string& name) const;
  std::vector<std::int64_t> i64(const std::string& name) const;

  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  std::vector<std::uint8_t> serialize() const;
  static CheckpointFile deserialize(const std::vector<std::uint8_t>& data);

  // Writes via a temporary file and rename, so an interrupted save leaves the
  // previous checkpoint intact.
  void save(const std::filesystem::path& path) const;
  static CheckpointFile load(const std::filesystem::path& path);

 private:
  void add(CheckpointEntry e);
  std::vector<CheckpointEntry> entries_;
};

}  // namespace wmf
