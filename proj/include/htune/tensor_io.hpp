#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "htune/tensor.hpp"

namespace htune {

/// Tensor file format: a UTF-8 header line "shape: d0 d1 ...\n" followed by
/// numel little-endian IEEE-754 binary32 values. Values are narrowed to
/// float on write.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// Named tensors behind a small text header:
///
///   htune-checkpoint 1
///   role: <role>
///   key=value            (zero or more config lines)
///   tensors: <count>
///   name: <name>         then one tensor record, repeated
struct Checkpoint {
    std::string role;
    std::map<std::string, std::string> config;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace htune
