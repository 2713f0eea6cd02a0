#pragma once

// JSON snapshots of network weights, flat in the documented parameter order
// (W_1 row-major, W_2, ..., W_L). Doubles are written with round-trip
// precision, so save/load is lossless.

#include "neuralbo/surrogate.hpp"

#include <nlohmann/json.hpp>

#include <vector>

namespace neuralbo {

inline nlohmann::json snapshot_json(const NetworkState& net) {
  const auto& s = net.shape();
  auto flat = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"format", "neuralbo-network/1"},
          {"input_dim", s.input_dim},
          {"depth", s.depth},
          {"width", s.width},
          {"init", to_string(net.scheme())},
          {"params", flat(net.params())},
          {"anchor", flat(net.anchor())}};
}

inline NetworkState network_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "neuralbo-network/1") throw InputError("unsupported network snapshot format");
    const NetworkShape shape{j.at("input_dim").get<std::size_t>(), j.at("depth").get<std::size_t>(),
                             j.at("width").get<std::size_t>()};
    auto anchor = j.at("anchor").get<std::vector<double>>();
    auto params = j.at("params").get<std::vector<double>>();
    if (anchor.size() != shape.param_count() || params.size() != shape.param_count())
      throw InputError("network snapshot has the wrong parameter count");
    NetworkState net(shape, parse_init_scheme(j.at("init").get<std::string>()),
                     Eigen::Map<Vector>(anchor.data(), static_cast<Eigen::Index>(anchor.size())));
    return net.with_params(Eigen::Map<Vector>(params.data(), static_cast<Eigen::Index>(params.size())));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed network snapshot: ") + e.what());
  }
}

}  // namespace neuralbo
