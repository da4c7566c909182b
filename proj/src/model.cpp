#include <jbot/model.hpp>

#include <fstream>

namespace jbot {

void save_params_manifest(const std::string& dir, const NetworkConfig& cfg,
                          const std::vector<std::string>& names,
                          const std::vector<std::array<long, 2>>& shapes, long step,
                          const std::string& tag) {
  nlohmann::json m;
  m["config"] = {{"d_model", cfg.d_model},       {"n_blocks", cfg.n_blocks},
                 {"n_heads", cfg.n_heads},       {"dropout", cfg.dropout},
                 {"final_layer_norm", cfg.final_layer_norm}, {"n_classes", cfg.n_classes}};
  m["step"] = step;
  m["tag"] = tag;
  nlohmann::json plist = nlohmann::json::array();
  for (std::size_t i = 0; i < names.size(); ++i)
    plist.push_back({{"name", names[i]}, {"shape", {shapes[i][0], shapes[i][1]}}});
  m["params"] = plist;
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw ModelError("save_checkpoint: cannot write manifest in " + dir);
  f << m.dump(2) << "\n";
}

NetworkConfig load_params_manifest(const std::string& dir, std::vector<std::string>& names,
                                   long& step, std::string& tag) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw ModelError("load_checkpoint: no manifest.json in " + dir);
  nlohmann::json m;
  try {
    f >> m;
  } catch (const nlohmann::json::exception& e) {
    throw ModelError("load_checkpoint: malformed manifest in " + dir + ": " + e.what());
  }
  NetworkConfig cfg;
  try {
    const auto& c = m.at("config");
    cfg.d_model = c.at("d_model").get<long>();
    cfg.n_blocks = c.at("n_blocks").get<long>();
    cfg.n_heads = c.at("n_heads").get<long>();
    cfg.dropout = c.at("dropout").get<double>();
    cfg.final_layer_norm = c.at("final_layer_norm").get<bool>();
    cfg.n_classes = c.at("n_classes").get<int>();
    step = m.at("step").get<long>();
    tag = m.at("tag").get<std::string>();
    names.clear();
    for (const auto& p : m.at("params")) names.push_back(p.at("name").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ModelError("load_checkpoint: manifest in " + dir + " missing fields: " + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace jbot
