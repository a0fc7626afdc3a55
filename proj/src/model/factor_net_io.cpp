#include "hsrgan/core/error.hpp"
#include "hsrgan/model/factor_net.hpp"

namespace hsrgan::model {

io::TensorFile save_factor_net(const FactorNet<float>& net, const std::string& role, const nlohmann::json& manifest) {
  io::TensorFile f;
  for (const auto& p : net.parameters()) f.tensors[p.name] = p.var.value();
  f.meta = {{"kind", "factor_net"}, {"role", role}, {"config", net.config().to_json()}, {"manifest", manifest}};
  return f;
}

std::shared_ptr<FactorNet<float>> load_factor_net(const io::TensorFile& file, const std::string& role) {
  if (file.meta.value("kind", "") != "factor_net") throw SchemaError("file is not a saved factor network");
  if (file.meta.value("role", "") != role)
    throw SchemaError("expected a " + role + " network, found " + file.meta.value("role", std::string("?")));
  auto net = std::make_shared<FactorNet<float>>(FactorNetConfig::from_json(file.meta.at("config")), 0);
  for (const auto& p : net->parameters()) {
    const Tensor<float>& t = file.at(p.name);
    if (t.shape() != p.var.shape()) throw SchemaError("tensor " + p.name + " has the wrong shape");
    ag::Var<float> v = p.var;
    v.mutable_value() = t;
  }
  net->freeze();
  return net;
}

}  // namespace hsrgan::model
