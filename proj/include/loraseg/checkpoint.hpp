#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "loraseg/tensor.hpp"

// "SL2L" tensor container, all integers little-endian:
//   magic "SL2L" | u32 version | u32 entry count
//   per entry: u32 name length | name bytes (UTF-8) | u8 dtype | u32 rank |
//              rank x u32 dims | payload
// dtype 0 is float32 (payload = product(dims) floats); dtype 1 is UTF-8 text
// (rank 1, dims[0] = byte count).

namespace loraseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
    enum class Kind : std::uint8_t { f32 = 0, text = 1 };

    std::string name;
    Kind kind = Kind::f32;
    Shape shape;
    std::vector<float> values;
    std::string text;

    static CheckpointEntry tensor(std::string name, Shape shape, std::vector<float> values);
    static CheckpointEntry note(std::string name, std::string text);
};

void write_checkpoint(const std::filesystem::path &path, const std::vector<CheckpointEntry> &entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path &path);

// Serialises into / parses from an in-memory byte string.
std::string encode_checkpoint(const std::vector<CheckpointEntry> &entries);
std::vector<CheckpointEntry> decode_checkpoint(const std::string &bytes);

} // namespace loraseg
