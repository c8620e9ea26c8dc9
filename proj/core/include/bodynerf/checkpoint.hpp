#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "bodynerf/optim.hpp"
#include "bodynerf/tensor.hpp"

namespace bodynerf {

/// Versioned on-disk container for parameters and optimizer state. The exact
/// byte layout is documented in docs/FORMATS.md; payloads are little-endian
/// 64-bit floats.
struct Checkpoint {
  struct Entry {
    Shape shape;
    std::vector<double> values;
    bool has_opt = false;
    std::int64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;
  };

  std::map<std::string, Entry> params;
  std::map<std::string, std::string> meta;

  static Checkpoint snapshot(std::span<Parameter* const> params,
                             std::map<std::string, std::string> meta);
  /// Writes values and optimizer state back into the given parameters.
  /// Missing names or shape mismatches are fatal, with full diagnostics.
  void restore(std::span<Parameter* const> params) const;

  std::string meta_at(const std::string& key) const;
  double meta_double(const std::string& key) const;
  std::int64_t meta_int(const std::string& key) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace bodynerf
