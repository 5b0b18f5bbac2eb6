#include "arnas/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace arnas {

namespace {

using nlohmann::ordered_json;

ordered_json store_to_json(const ParamStore& store) {
  ordered_json list = ordered_json::array();
  for (const auto& [name, t] : store.entries()) {
    const Shape s = t.shape();
    list.push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}, {"data", t.values()}});
  }
  return list;
}

void json_into_store(const nlohmann::json& list, ParamStore& store) {
  for (const auto& item : list) {
    const std::string name = item.at("name").get<std::string>();
    const auto dims = item.at("shape").get<std::vector<int>>();
    if (dims.size() != 4) throw ConfigError("parameter " + name + " needs a 4-d shape");
    Tensor value(Shape{dims[0], dims[1], dims[2], dims[3]}, item.at("data").get<std::vector<double>>());
    if (!store.contains(name)) throw ConfigError("checkpoint parameter " + name + " does not exist in the network");
    Tensor& dst = store.at(name);
    if (!(dst.shape() == value.shape())) {
      throw ConfigError("checkpoint parameter " + name + " has shape " + value.shape().str() +
                        ", network expects " + dst.shape().str());
    }
    dst = std::move(value);
  }
}

}  // namespace

std::string checkpoint_to_string(const Network& net) {
  ordered_json doc;
  doc["format"] = "arnas-checkpoint";
  doc["version"] = 1;
  doc["kind"] = net.is_supernet() ? "supernet" : "discrete";
  doc["seed"] = net.seed();
  const MacroConfig& m = net.macro();
  doc["macro"] = {{"num_cells", m.num_cells},
                  {"init_channels", m.init_channels},
                  {"placement", placement_string(m.placement)},
                  {"filters", filter_string(m.filter_setting)},
                  {"num_classes", m.num_classes},
                  {"input_shape", {m.input_shape.channels, m.input_shape.height, m.input_shape.width}}};
  doc["num_intermediate_nodes"] = net.topology().num_intermediate_nodes();
  doc["input_normalization"] = {{"mean", net.input_normalization().mean},
                                {"std", net.input_normalization().stddev}};
  if (net.is_supernet()) {
    ordered_json alpha;
    for (CellRole r : kAllRoles) alpha[std::string(role_name(r))] = net.alpha().block(r);
    doc["alpha"] = std::move(alpha);
  } else {
    doc["genotype"] = ordered_json::parse(serialize_genotype(net.genotype()));
  }
  doc["parameters"] = store_to_json(net.weights());
  doc["buffers"] = store_to_json(net.buffers());
  return doc.dump() + "\n";
}

Network checkpoint_from_string(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != "arnas-checkpoint") throw ConfigError("not an arnas checkpoint");
    if (doc.at("version").get<int>() != 1) throw ConfigError("unsupported checkpoint version");
    const auto& jm = doc.at("macro");
    MacroConfig m;
    m.num_cells = jm.at("num_cells").get<int>();
    m.init_channels = jm.at("init_channels").get<int>();
    m.placement = parse_placement(jm.at("placement").get<std::string>());
    m.filter_setting = parse_filter_setting(jm.at("filters").get<std::string>());
    m.num_classes = jm.at("num_classes").get<int>();
    const auto shape = jm.at("input_shape").get<std::vector<int>>();
    if (shape.size() != 3) throw ConfigError("input_shape must have 3 entries");
    m.input_shape = InputShape{shape[0], shape[1], shape[2]};
    const int nodes = doc.at("num_intermediate_nodes").get<int>();
    const std::uint64_t seed = doc.at("seed").get<std::uint64_t>();
    const std::string kind = doc.at("kind").get<std::string>();
    Network net;
    if (kind == "supernet") {
      net = init_supernet(m, CellTopology(nodes), seed);
      const auto& ja = doc.at("alpha");
      for (CellRole r : kAllRoles) {
        auto block = ja.at(std::string(role_name(r))).get<std::vector<double>>();
        if (block.size() != net.alpha().block(r).size()) throw ConfigError("alpha block has the wrong size");
        net.alpha().block(r) = std::move(block);
      }
    } else if (kind == "discrete") {
      net = instantiate_discrete(parse_genotype(doc.at("genotype").dump()), m, seed);
    } else {
      throw ConfigError("unknown checkpoint kind \"" + kind + "\"");
    }
    const auto& jn = doc.at("input_normalization");
    InputNormalization norm{jn.at("mean").get<std::vector<double>>(), jn.at("std").get<std::vector<double>>()};
    net.set_input_normalization(std::move(norm));
    json_into_store(doc.at("parameters"), net.weights());
    json_into_store(doc.at("buffers"), net.buffers());
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const Network& net) {
  write_file_atomic(path, checkpoint_to_string(net));
}

Network load_checkpoint(const std::string& path) { return checkpoint_from_string(read_file(path)); }

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace arnas
