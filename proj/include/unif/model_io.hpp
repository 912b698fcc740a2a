#pragma once

// Model and checkpoint files: a "UNIF-1" header line, a one-line JSON
// description (shapes, configuration, skeleton copy), then raw little-endian
// doubles for the flat parameters and the rest pose. Checkpoints append the
// Adam moments and the epoch counter.

#include <optional>
#include <string>

#include "unif/model.hpp"
#include "unif/trainer.hpp"

namespace unif {

void save_model(const UnifModel& model, const std::string& path,
                const std::string& echo_json = "{}");
UnifModel load_model(const std::string& path);

struct Checkpoint {
  UnifModel model;
  AdamState adam;
  int epoch = 0;
};

void save_checkpoint(const UnifModel& model, const AdamState& adam, int epoch,
                     const std::string& path, const std::string& echo_json = "{}");
Checkpoint load_checkpoint(const std::string& path);

}  // namespace unif
