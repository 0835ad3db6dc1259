#include "wmtrig/gauntlet/prune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wmtrig/common/error.hpp"
#include "wmtrig/common/log.hpp"

namespace wmtrig::gauntlet {
namespace {

using victims::ConvNet;
namespace nn = victims::nn;

std::vector<int> keep_set(const nn::Vec& norms, double rate, GroupPrune& g) {
  const int c = static_cast<int>(norms.size());
  std::vector<int> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return norms[a] < norms[b]; });
  const int drop = channels_to_remove(c, rate);
  g.channels_before = c;
  g.removed.assign(order.begin(), order.begin() + drop);
  std::sort(g.removed.begin(), g.removed.end());
  std::vector<int> keep(order.begin() + drop, order.end());
  std::sort(keep.begin(), keep.end());
  return keep;
}

void keep_outputs(nn::Conv2d& c, const std::vector<int>& keep) {
  nn::Mat w(keep.size(), c.w.cols());
  nn::Vec b(keep.size());
  for (size_t i = 0; i < keep.size(); ++i) {
    w.row(i) = c.w.row(keep[i]);
    b[i] = c.b[keep[i]];
  }
  c.w = std::move(w);
  c.b = std::move(b);
  c.cout = static_cast<int>(keep.size());
}

void keep_inputs(nn::Conv2d& c, const std::vector<int>& keep) {
  const int kk = c.k * c.k;
  nn::Mat w(c.w.rows(), keep.size() * kk);
  for (size_t i = 0; i < keep.size(); ++i) w.middleCols(i * kk, kk) = c.w.middleCols(keep[i] * kk, kk);
  c.w = std::move(w);
  c.cin = static_cast<int>(keep.size());
}

void keep_inputs(nn::Linear& l, const std::vector<int>& keep) {
  nn::Mat w(l.w.rows(), keep.size());
  for (size_t i = 0; i < keep.size(); ++i) w.col(i) = l.w.col(keep[i]);
  l.w = std::move(w);
}

// Consumers of the channels produced before block `next`.
void slice_consumers(ConvNet& net, size_t next, const std::vector<int>& keep) {
  if (next < net.blocks.size()) {
    keep_inputs(net.blocks[next].conv1, keep);
    if (net.blocks[next].proj) keep_inputs(*net.blocks[next].proj, keep);
  } else {
    keep_inputs(net.head, keep);
  }
}

void prune_conv(ConvNet& net, double rate, PruneLog& log) {
  net.check_structure();
  struct Plan {
    std::vector<int> keep;
    std::vector<nn::Conv2d*> producers;
    std::vector<nn::Conv2d*> inner_consumers;  // conv2 of the same block
    size_t next = 0;                          // block index whose input this is
  };
  std::vector<Plan> plans;
  auto add = [&](std::string name, nn::Vec norms, std::vector<nn::Conv2d*> producers,
                 std::vector<nn::Conv2d*> inner, size_t next) {
    GroupPrune g;
    g.name = std::move(name);
    plans.push_back({keep_set(norms, rate, g), std::move(producers), std::move(inner), next});
    log.groups.push_back(std::move(g));
  };

  add("stem", net.stem.filter_norms(), {&net.stem}, {}, 0);
  for (size_t i = 0; i < net.blocks.size(); ++i) {
    auto& b = net.blocks[i];
    const std::string base = "blocks." + std::to_string(i);
    if (b.residual()) {
      add(base + ".conv1", b.conv1.filter_norms(), {&b.conv1}, {&*b.conv2}, i + 1);
      const nn::Vec joint = (b.conv2->filter_norms().array().square() + b.proj->filter_norms().array().square()).sqrt();
      add(base + ".out", joint, {&*b.conv2, &*b.proj}, {}, i + 1);
    } else {
      add(base + ".conv1", b.conv1.filter_norms(), {&b.conv1}, {}, i + 1);
    }
  }

  for (const auto& p : plans) {
    for (auto* c : p.producers) keep_outputs(*c, p.keep);
    if (!p.inner_consumers.empty()) {
      for (auto* c : p.inner_consumers) keep_inputs(*c, p.keep);
    } else {
      slice_consumers(net, p.next, p.keep);
    }
  }
  net.check_structure();
}

}  // namespace

void PruneSpec::validate() const {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("prune rate must lie in [0, 1], got " + std::to_string(rate));
}

nlohmann::json PruneSpec::to_json() const {
  return {{"rate", rate}, {"ranking", "l2_ascending"}, {"scope", "conv_channels"}};
}

PruneSpec PruneSpec::from_json(const nlohmann::json& j) {
  PruneSpec s;
  s.rate = j.at("rate").get<double>();
  return s;
}

int channels_to_remove(int channels, double rate) {
  // The epsilon keeps products such as 0.3 * 10 from landing just below an
  // integer.
  const int n = static_cast<int>(std::floor(rate * channels + 1e-9));
  return std::clamp(n, 0, channels - 1);
}

victims::VictimModel prune_model(const victims::VictimModel& model, const PruneSpec& spec, PruneLog* log) {
  spec.validate();
  PruneLog local;
  PruneLog& out = log ? *log : local;
  out = {};
  out.parameters_before = model.net().parameter_count();
  victims::VictimModel pruned = model;
  auto* conv = dynamic_cast<ConvNet*>(&pruned.net());
  if (!conv) {
    WMTRIG_WARN << "prune: " << victims::to_string(model.net().architecture())
                << " victim has no convolutional layers; returned unchanged";
    out.skipped = true;
    out.parameters_after = out.parameters_before;
    return pruned;
  }
  prune_conv(*conv, spec.rate, out);
  out.parameters_after = pruned.net().parameter_count();
  pruned.provenance["pruning"] = spec.to_json();
  return pruned;
}

}  // namespace wmtrig::gauntlet
