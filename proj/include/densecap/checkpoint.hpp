#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "densecap/autodiff.hpp"

namespace densecap {

// Single-file archive: a JSON config block plus named float64 tensors.
// Layout (little endian): magic "DCP1", u64 json length, json bytes,
// u64 tensor count, then per tensor u32 name length, name bytes, u64 rows,
// u64 cols, rows*cols doubles in column-major order. Round-trips bit-exactly.
struct Checkpoint {
  nlohmann::json config;
  std::map<std::string, ad::Mat> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace densecap
