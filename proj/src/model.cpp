#include "avca/model.hpp"

namespace avca {

std::vector<std::pair<std::string, Shape>> parameter_shapes(const AvcaConfig& config) {
  config.validate();
  AvcaParams<float> params(config);
  std::vector<std::pair<std::string, Shape>> out;
  params.for_each_parameter([&](const std::string& name, Tensor<float>& t) { out.emplace_back(name, t.shape()); });
  return out;
}

long long param_count(const AvcaConfig& config) {
  long long total = 0;
  for (const auto& [name, shape] : parameter_shapes(config)) {
    long long n = 1;
    for (Index d : shape) n *= d;
    total += n;
  }
  return total;
}

}  // namespace avca
