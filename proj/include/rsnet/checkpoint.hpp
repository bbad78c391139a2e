#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rsnet/model.hpp"
#include "rsnet/optim.hpp"

namespace rsnet {

// Binary layout, all integers little-endian:
//   "RSNT" | u16 version | u64 config digest | u32 record count
//   per record: u32 name length | name | u8 dtype | u8 rank | u32 dims[rank] | raw values
//   u32 CRC-32 of every preceding byte
// dtype tags: 1 = f32, 2 = f64, 3 = i64, 4 = u8.
// Besides the parameters the file holds "meta.config" (u8 config text) and,
// when an optimizer is saved, "optim.step", "optim.m.<param>", "optim.v.<param>".
constexpr std::uint16_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 1, F64 = 2, I64 = 3, U8 = 4 };

struct CheckpointRecord {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;

  std::size_t count() const;
};

struct CheckpointFile {
  std::uint64_t digest = 0;
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file);
// Throws DataError on bad magic, unknown version, truncation, trailing bytes
// or a checksum mismatch.
CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");

void write_checkpoint_file(const std::string& path, const CheckpointFile& file);
CheckpointFile read_checkpoint_file(const std::string& path);

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path, const AdamW<T>* optimizer = nullptr);

// Copies tensors into an existing model (and optimizer, if given and the
// file has its state). A digest mismatch raises DataError listing the
// parameters that are missing, extra or differently shaped.
template <typename T>
void load_into(Model<T>& model, const CheckpointFile& file, AdamW<T>* optimizer = nullptr);

// Rebuilds the model from the stored config, then loads its tensors.
template <typename T>
Model<T> load_checkpoint(const std::string& path);

ArchConfig checkpoint_config(const CheckpointFile& file);

}  // namespace rsnet
