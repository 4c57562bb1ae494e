#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "disncl/synthetic.hpp"

namespace disncl {

// Named-array container file: 8-byte magic "DNCLARR1", u32 version,
// u64 header length, UTF-8 JSON header, then the payload of row-major
// little-endian float32 arrays. Full byte layout in docs/FORMATS.md.
struct NamedArray {
  std::string name;
  Eigen::MatrixXf data;
};

struct Container {
  nlohmann::json meta;  // free-form, schema depends on "kind"
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path);

// PairDataset <-> container. Generated values are f32-quantized at the
// source, so save/load round-trips bitwise.
void save_dataset(const std::string& path, const PairDataset& d);
PairDataset load_dataset(const std::string& path);

// Wraps two raw feature containers (first array of each) as a PairDataset
// with all-true match flags and no latents.
PairDataset ingest_pair(const std::string& path_a, const std::string& path_b);

}  // namespace disncl
