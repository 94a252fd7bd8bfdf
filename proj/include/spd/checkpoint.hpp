// Checkpoint file: a plain-text manifest of `key = value` lines terminated by
// a line `end`, immediately followed by a flat little-endian float32 payload.
//
//   spdenoise-checkpoint 1
//   network.kind = drunet
//   ...
//   tensor.count = 2
//   tensor.0.name = param/head.weight
//   tensor.0.shape = 16x1x3x3
//   tensor.0.offset = 0          (bytes into the payload)
//   ...
//   payload.bytes = 640
//   end
//   <payload>
//
// Network parameters are stored as "param/<name>", optimizer moments as
// "adam.m/<name>", "adam.v/<name>" and "sgd.velocity/<name>".
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "spd/models.hpp"
#include "spd/optim.hpp"

namespace spd {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  NetworkState network;
  std::optional<AdamState<float>> adam;
  std::optional<SgdState<float>> sgd;
  std::map<std::string, std::string> meta;

  bool operator==(const Checkpoint&) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);
double parse_double(const std::string& s);

}  // namespace spd
