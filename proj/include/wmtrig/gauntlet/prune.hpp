#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "wmtrig/victims/models.hpp"

namespace wmtrig::gauntlet {

struct PruneSpec {
  double rate = 0.0;  // fraction of channels removed per group, in [0, 1]

  void validate() const;
  nlohmann::json to_json() const;
  static PruneSpec from_json(const nlohmann::json& j);
};

// One coupled set of output channels: the producers share a channel index
// (a residual block's conv2 and projection are summed, so they are pruned
// together) and every consumer loses the matching input slice.
struct GroupPrune {
  std::string name;
  int channels_before = 0;
  std::vector<int> removed;  // original indices, ascending
};

struct PruneLog {
  std::vector<GroupPrune> groups;
  size_t parameters_before = 0;
  size_t parameters_after = 0;
  bool skipped = false;  // no convolutional layers (recurrent victim)
};

// Structured channel pruning on a copy of the model. In each group,
// channels are ranked by the L2 norm of their outgoing filter weights
// (biases excluded; joint norm across coupled producers), ties to the lower
// index, and floor(rate * C) of them are removed, leaving at least one.
// Ranking uses the unpruned weights of every layer. Recurrent victims are
// returned unchanged with a warning. Throws ShapeError naming the layer if
// the network is inconsistent before or after pruning.
victims::VictimModel prune_model(const victims::VictimModel& model, const PruneSpec& spec, PruneLog* log = nullptr);

// Number of channels removed from a group of `channels` at `rate`.
int channels_to_remove(int channels, double rate);

}  // namespace wmtrig::gauntlet
