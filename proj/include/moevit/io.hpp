#pragma once

#include <string>
#include <utility>
#include <vector>

#include "moevit/tensor.hpp"

namespace moevit {

// MCT1 container: magic "MCT1", rank (u32 LE), extents (u32 LE each),
// then row-major f64 LE payload.
void write_mct1(const std::string& path, const Tensor& t);
Tensor read_mct1(const std::string& path, bool requires_grad = false);

std::vector<uint8_t> encode_mct1(const Tensor& t);
Tensor decode_mct1(const std::vector<uint8_t>& bytes, bool requires_grad = false);

/// Checkpoint manifest: one `name path shape...` line per tensor.
/// Paths are relative to the manifest's directory.
struct Manifest {
  std::vector<std::pair<std::string, std::string>> entries;  // name -> path
};

void write_manifest(const std::string& dir,
                    const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> read_manifest(
    const std::string& dir, bool requires_grad = false);

}  // namespace moevit
