#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "depthfake/nn/graph.hpp"

namespace depthfake::nn {

struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> dims;
  std::vector<float> values;
};

// Portable weights container:
//   "DFWEIGHT" | u32 version | u32 count |
//   count x { u32 name_len | name | u32 ndim | i64 dims[ndim] | f32 values[] }
// All integers and floats little-endian. Written atomically (temp + rename).
void write_weights(const std::filesystem::path& file, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_weights(const std::filesystem::path& file);

template <typename T>
std::vector<NamedTensor> export_params(const Graph<T>& graph);

struct ImportPolicy {
  // Graph parameters whose name starts with one of these prefixes may be
  // missing from the file.
  std::vector<std::string> optional_prefixes;
  // Tensors in the file that match no graph parameter are an error unless set.
  bool ignore_unknown = false;
};

template <typename T>
void import_params(Graph<T>& graph, const std::vector<NamedTensor>& tensors,
                   const ImportPolicy& policy = {});

// SHA-256 over names, shapes and values of every parameter whose name does
// not start with one of `exclude_prefixes`.
template <typename T>
std::string weights_digest(const Graph<T>& graph, const std::vector<std::string>& exclude_prefixes = {});

// Writes `bytes` to `file` through a temporary sibling and a rename.
void atomic_write(const std::filesystem::path& file, const std::string& bytes);

}  // namespace depthfake::nn
