#include "run_config.hpp"

#include <filesystem>
#include <set>

#include "arnas/checkpoint.hpp"

namespace arnas::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config section \"" + section + "\" must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) {
      throw ConfigError("unknown key \"" + key + "\" in config section \"" + section + "\"");
    }
  }
}

template <typename T>
T get(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key \"" + key + "\" has the wrong type");
  }
}

int get_int(const json& j, const std::string& key) {
  const json& v = j.at(key);
  if (!v.is_number_integer()) throw ConfigError("config key \"" + key + "\" must be an integer");
  return v.get<int>();
}

std::string resolve(const std::string& path, const std::string& base) {
  if (path.empty() || base.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base) / path).lexically_normal().string();
}

void parse_data(const json& j, DatasetSpec& spec, const std::string& base) {
  if (j.is_string()) {
    spec = DatasetSpec::from_uri(j.get<std::string>());
    if (spec.source == DatasetSpec::Source::kArchive) spec.path = resolve(spec.path, base);
    return;
  }
  require_keys(j, "data", {"uri", "augment_crop", "augment_flip", "num_classes", "per_class_limit",
                           "test_per_class", "image_size"});
  spec = DatasetSpec::from_uri(j.contains("uri") ? get<std::string>(j, "uri") : "synthetic://blobs");
  if (spec.source == DatasetSpec::Source::kArchive) spec.path = resolve(spec.path, base);
  if (j.contains("augment_crop")) spec.augment_crop = get<bool>(j, "augment_crop");
  if (j.contains("augment_flip")) spec.augment_flip = get<bool>(j, "augment_flip");
  if (j.contains("num_classes")) spec.num_classes = get_int(j, "num_classes");
  if (j.contains("per_class_limit")) spec.per_class_limit = get_int(j, "per_class_limit");
  if (j.contains("test_per_class")) spec.test_per_class = get_int(j, "test_per_class");
  if (j.contains("image_size")) spec.image_size = get_int(j, "image_size");
  spec.validate();
}

void parse_macro(const json& j, MacroConfig& m) {
  require_keys(j, "macro", {"num_cells", "init_channels", "placement", "filters"});
  if (j.contains("num_cells")) m.num_cells = get_int(j, "num_cells");
  if (j.contains("init_channels")) m.init_channels = get_int(j, "init_channels");
  if (j.contains("placement")) m.placement = parse_placement(get<std::string>(j, "placement"));
  if (j.contains("filters")) m.filter_setting = parse_filter_setting(get<std::string>(j, "filters"));
}

void parse_search(const json& j, SearchConfig& s) {
  require_keys(j, "search", {"epochs", "batch_size", "lambda", "attack", "weight_lr", "weight_lr_min",
                             "weight_momentum", "weight_decay", "arch_optimizer", "arch_lr",
                             "arch_beta1", "arch_beta2", "arch_weight_decay", "unroll_lr", "fd_scale"});
  if (j.contains("epochs")) s.epochs = get_int(j, "epochs");
  if (j.contains("batch_size")) s.batch_size = get_int(j, "batch_size");
  if (j.contains("lambda")) s.lambda = parse_number(j.at("lambda"), "lambda");
  if (j.contains("attack")) s.attack = parse_attack(j.at("attack"));
  if (j.contains("weight_lr")) s.weight_lr = parse_number(j.at("weight_lr"), "weight_lr");
  if (j.contains("weight_lr_min")) s.weight_lr_min = parse_number(j.at("weight_lr_min"), "weight_lr_min");
  if (j.contains("weight_momentum")) s.weight_momentum = parse_number(j.at("weight_momentum"), "weight_momentum");
  if (j.contains("weight_decay")) s.weight_decay = parse_number(j.at("weight_decay"), "weight_decay");
  if (j.contains("arch_optimizer")) {
    const auto name = get<std::string>(j, "arch_optimizer");
    if (name == "adam") {
      s.arch_optimizer = ArchOptimizerKind::kAdam;
    } else if (name == "gd") {
      s.arch_optimizer = ArchOptimizerKind::kGradientDescent;
    } else {
      throw ConfigError("arch_optimizer must be \"adam\" or \"gd\", got \"" + name + "\"");
    }
  }
  if (j.contains("arch_lr")) s.arch_lr = parse_number(j.at("arch_lr"), "arch_lr");
  if (j.contains("arch_beta1")) s.arch_beta1 = parse_number(j.at("arch_beta1"), "arch_beta1");
  if (j.contains("arch_beta2")) s.arch_beta2 = parse_number(j.at("arch_beta2"), "arch_beta2");
  if (j.contains("arch_weight_decay")) s.arch_weight_decay = parse_number(j.at("arch_weight_decay"), "arch_weight_decay");
  if (j.contains("unroll_lr") && !j.at("unroll_lr").is_null()) s.unroll_lr = parse_number(j.at("unroll_lr"), "unroll_lr");
  if (j.contains("fd_scale")) s.fd_scale = parse_number(j.at("fd_scale"), "fd_scale");
}

void parse_train(const json& j, TrainConfig& t) {
  require_keys(j, "train", {"epochs", "batch_size", "lr", "momentum", "weight_decay", "lr_decay_epochs",
                            "lr_decay_factor", "adversarial", "attack"});
  if (j.contains("epochs")) t.epochs = get_int(j, "epochs");
  if (j.contains("batch_size")) t.batch_size = get_int(j, "batch_size");
  if (j.contains("lr")) t.lr = parse_number(j.at("lr"), "lr");
  if (j.contains("momentum")) t.momentum = parse_number(j.at("momentum"), "momentum");
  if (j.contains("weight_decay")) t.weight_decay = parse_number(j.at("weight_decay"), "weight_decay");
  if (j.contains("lr_decay_epochs")) t.lr_decay_epochs = get<std::vector<int>>(j, "lr_decay_epochs");
  if (j.contains("lr_decay_factor")) t.lr_decay_factor = parse_number(j.at("lr_decay_factor"), "lr_decay_factor");
  if (j.contains("adversarial")) t.adversarial = get<bool>(j, "adversarial");
  if (j.contains("attack")) t.attack = parse_attack(j.at("attack"));
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) return;
  if (!fs::is_regular_file(path)) throw ConfigError(what + " \"" + path + "\" does not exist");
}

}  // namespace

double parse_number(const json& value, const std::string& key) {
  if (value.is_number()) return value.get<double>();
  if (value.is_string()) {
    const std::string s = value.get<std::string>();
    try {
      const auto slash = s.find('/');
      std::size_t used = 0;
      if (slash == std::string::npos) {
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
      } else {
        const std::string num = s.substr(0, slash);
        const std::string den = s.substr(slash + 1);
        std::size_t u1 = 0;
        std::size_t u2 = 0;
        const double a = std::stod(num, &u1);
        const double b = std::stod(den, &u2);
        if (u1 == num.size() && u2 == den.size() && b != 0.0) return a / b;
      }
    } catch (const std::logic_error&) {
    }
  }
  throw ConfigError("config key \"" + key + "\" must be a number or a \"p/q\" fraction");
}

AttackConfig parse_attack(const json& j) {
  require_keys(j, "attack", {"name", "epsilon", "step_size", "steps", "random_start"});
  AttackConfig a;
  const std::string kind = j.contains("name") ? get<std::string>(j, "name") : "pgd";
  if (kind == "fgsm") {
    a = AttackConfig::fgsm(j.contains("epsilon") ? parse_number(j.at("epsilon"), "epsilon") : 8.0 / 255.0);
    if (j.contains("steps") || j.contains("step_size") || j.contains("random_start")) {
      throw ConfigError("fgsm attacks take only \"epsilon\"");
    }
    return a;
  }
  a.name = kind;
  if (j.contains("epsilon")) a.epsilon = parse_number(j.at("epsilon"), "epsilon");
  if (j.contains("step_size")) a.step_size = parse_number(j.at("step_size"), "step_size");
  if (j.contains("steps")) a.steps = get_int(j, "steps");
  if (j.contains("random_start")) a.random_start = get<bool>(j, "random_start");
  if (!j.contains("name")) a.name = "pgd" + std::to_string(a.steps);
  a.validate();
  return a;
}

json attack_to_json(const AttackConfig& a) {
  return json{{"name", a.name}, {"epsilon", a.epsilon}, {"step_size", a.step_size},
              {"steps", a.steps}, {"random_start", a.random_start}};
}

std::vector<AttackConfig> default_eval_attacks() {
  return {AttackConfig::fgsm(8.0 / 255.0), AttackConfig::pgd(20, 8.0 / 255.0, 2.0 / 255.0, true),
          AttackConfig::pgd(100, 8.0 / 255.0, 2.0 / 255.0, true)};
}

std::vector<GridEntry> default_ablation_grid() {
  const auto row = [](const char* p, const char* f) {
    return GridEntry{parse_placement(p), parse_filter_setting(f)};
  };
  return {row("A-A-R", "1-2-2"), row("R-A-A", "1-2-2"), row("A-R-A", "1-2-2"),
          row("A-A-R", "1-2-3"), row("A-A-R", "1-2-4"), row("A-A-A", "1-2-4")};
}

RunConfig parse_run_config(const json& doc, const std::string& base) {
  require_keys(doc, "<root>", {"seed", "out", "data", "macro", "search", "train", "eval", "attacks",
                               "transfer_attack", "genotype", "checkpoint", "models", "grid",
                               "genotypes"});
  RunConfig cfg;
  cfg.attacks = default_eval_attacks();
  cfg.grid = default_ablation_grid();
  if (doc.contains("seed")) {
    if (!doc.at("seed").is_number_unsigned() && !doc.at("seed").is_number_integer())
      throw ConfigError("config key \"seed\" must be a non-negative integer");
    if (doc.at("seed").is_number_integer() && doc.at("seed").get<long long>() < 0)
      throw ConfigError("config key \"seed\" must be a non-negative integer");
    cfg.seed = doc.at("seed").get<std::uint64_t>();
  }
  if (doc.contains("out")) cfg.out = resolve(get<std::string>(doc, "out"), base);
  if (doc.contains("data")) parse_data(doc.at("data"), cfg.data, base);
  if (doc.contains("macro")) parse_macro(doc.at("macro"), cfg.macro);
  if (doc.contains("search")) parse_search(doc.at("search"), cfg.search);
  if (doc.contains("train")) parse_train(doc.at("train"), cfg.train);
  if (doc.contains("eval")) {
    const json& e = doc.at("eval");
    require_keys(e, "eval", {"batch_size", "split"});
    if (e.contains("batch_size")) cfg.eval.batch_size = get_int(e, "batch_size");
    if (e.contains("split")) cfg.eval.split = get<std::string>(e, "split");
    if (cfg.eval.split != "test" && cfg.eval.split != "val")
      throw ConfigError("eval.split must be \"test\" or \"val\"");
    if (cfg.eval.batch_size < 1) throw ConfigError("eval.batch_size must be >= 1");
  }
  if (doc.contains("attacks")) {
    if (!doc.at("attacks").is_array()) throw ConfigError("\"attacks\" must be an array");
    cfg.attacks.clear();
    std::set<std::string> names;
    for (const json& a : doc.at("attacks")) {
      cfg.attacks.push_back(parse_attack(a));
      if (!names.insert(cfg.attacks.back().name).second)
        throw ConfigError("duplicate attack name \"" + cfg.attacks.back().name + "\"");
    }
  }
  if (doc.contains("transfer_attack")) cfg.transfer_attack = parse_attack(doc.at("transfer_attack"));
  if (doc.contains("genotype")) cfg.genotype = resolve(get<std::string>(doc, "genotype"), base);
  if (doc.contains("checkpoint")) cfg.checkpoint = resolve(get<std::string>(doc, "checkpoint"), base);
  if (doc.contains("models")) {
    const json& m = doc.at("models");
    if (!m.is_array()) throw ConfigError("\"models\" must be an array of {\"name\", \"checkpoint\"}");
    for (const json& e : m) {
      require_keys(e, "models[]", {"name", "checkpoint"});
      cfg.models.emplace_back(get<std::string>(e, "name"), resolve(get<std::string>(e, "checkpoint"), base));
    }
  }
  if (doc.contains("grid")) {
    if (!doc.at("grid").is_array()) throw ConfigError("\"grid\" must be an array");
    cfg.grid.clear();
    for (const json& e : doc.at("grid")) {
      require_keys(e, "grid[]", {"placement", "filters"});
      cfg.grid.push_back(GridEntry{parse_placement(get<std::string>(e, "placement")),
                                   parse_filter_setting(get<std::string>(e, "filters"))});
    }
  }
  if (doc.contains("genotypes")) {
    for (const auto& g : get<std::vector<std::string>>(doc, "genotypes"))
      cfg.genotypes.push_back(resolve(g, base));
  }

  require_file(cfg.genotype, "genotype file");
  require_file(cfg.checkpoint, "checkpoint");
  for (const auto& [name, path] : cfg.models) require_file(path, "checkpoint of model " + name);
  cfg.search.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config \"" + path + "\": " + e.what());
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config \"" + path + "\" is not valid JSON: " + e.what());
  }
  return parse_run_config(doc, fs::path(path).parent_path().string());
}

}  // namespace arnas::cli
