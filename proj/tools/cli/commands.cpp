#include "commands.hpp"

#include <filesystem>
#include <iomanip>
#include <sstream>

#include <spdlog/spdlog.h>

#include "arnas/bilevel_search.hpp"
#include "arnas/checkpoint.hpp"
#include "arnas/model_stats.hpp"
#include "arnas/train_eval.hpp"

namespace arnas::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

fs::path out_dir(const RunConfig& cfg) {
  fs::path dir(cfg.out);
  fs::create_directories(dir);
  return dir;
}

MacroConfig macro_for(const RunConfig& cfg, const DatasetSplits& data) {
  MacroConfig m = cfg.macro;
  m.num_classes = data.num_classes;
  m.input_shape = data.input_shape;
  return m;
}

const DataStream& eval_stream(const RunConfig& cfg, const DatasetSplits& data) {
  return cfg.eval.split == "val" ? data.val : data.test;
}

Genotype read_genotype(const std::string& path) {
  if (path.empty()) throw ConfigError("this command needs a \"genotype\" file");
  return parse_genotype(read_file(path));
}

void check_input_shape(const Network& net, const DatasetSplits& data) {
  if (!(net.macro().input_shape == data.input_shape) || net.macro().num_classes != data.num_classes) {
    throw ConfigError("checkpoint expects " + std::to_string(net.macro().num_classes) +
                      " classes at " + std::to_string(net.macro().input_shape.height) + "x" +
                      std::to_string(net.macro().input_shape.width) +
                      ", which the configured data does not provide");
  }
}

struct Outcome {
  Genotype genotype;
  double natural_acc = 0.0;
  double pgd20_acc = 0.0;
};

Outcome search_train_evaluate(const RunConfig& cfg, const MacroConfig& macro) {
  const DatasetSplits search_data = load(cfg.data, SplitMode::kSearch);
  SearchConfig sc = cfg.search;
  sc.seed = cfg.seed;
  const SearchResult found = search(sc, macro, search_data);

  const DatasetSplits train_data = load(cfg.data, SplitMode::kTrain);
  Network net = instantiate_discrete(found.genotype, macro_for(cfg, train_data), cfg.seed);
  net.set_input_normalization(train_data.normalization);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  adversarial_train(net, train_data, tc);
  const AttackConfig pgd20 = AttackConfig::pgd(20, 8.0 / 255.0, 2.0 / 255.0, true);
  const EvalReport r = evaluate(net, eval_stream(cfg, train_data), {pgd20}, cfg.seed, cfg.eval.batch_size);
  return Outcome{found.genotype, r.natural_acc, r.attacks.front().accuracy};
}

}  // namespace

OpCounts count_operations(const std::vector<Genotype>& genotypes) {
  OpCounts counts{};
  for (const Genotype& g : genotypes)
    for (CellRole r : kAllRoles)
      for (const SelectedEdge& e : g.cell(r)) ++counts[static_cast<int>(r)][static_cast<int>(e.op)];
  return counts;
}

std::string op_counts_csv(const OpCounts& counts) {
  std::ostringstream out;
  out << "role,op,count\n";
  for (CellRole r : kAllRoles)
    for (OpKind op : kAllOps)
      out << role_name(r) << ',' << op_name(op) << ',' << counts[static_cast<int>(r)][static_cast<int>(op)] << '\n';
  return out.str();
}

std::string alpha_json(const ArchParams& alpha) {
  ordered_json j;
  j["num_edges"] = alpha.num_edges();
  ordered_json ops = ordered_json::array();
  for (OpKind op : kAllOps) ops.push_back(std::string(op_name(op)));
  j["ops"] = ops;
  for (CellRole r : kAllRoles) {
    ordered_json rows = ordered_json::array();
    for (int e = 0; e < alpha.num_edges(); ++e) {
      ordered_json row = ordered_json::array();
      for (int k = 0; k < kNumOps; ++k) row.push_back(alpha.at(r, e, k));
      rows.push_back(row);
    }
    j[std::string(role_name(r))] = rows;
  }
  return j.dump(2) + "\n";
}

void cmd_search(const RunConfig& cfg) {
  const DatasetSplits data = load(cfg.data, SplitMode::kSearch);
  SearchConfig sc = cfg.search;
  sc.seed = cfg.seed;
  spdlog::info("search: {} epochs, {} train / {} val samples, lambda {}", sc.epochs, data.train.size(),
               data.val.size(), sc.lambda);
  const SearchResult result = search(sc, cfg.macro, data, CellTopology(4), [](const StepRecord& r) {
    spdlog::info("epoch {} step {}: gamma* {:.4f} nat_val {:.4f} adv_val {:.4f}", r.epoch, r.step,
                 r.gamma_star, r.nat_val_loss, r.adv_val_loss);
  });
  const fs::path dir = out_dir(cfg);
  write_file_atomic((dir / "history.csv").string(), history_csv(result.history));
  write_file_atomic((dir / "alpha.json").string(), alpha_json(result.supernet.alpha()));
  write_file_atomic((dir / "genotype.json").string(), serialize_genotype(result.genotype));
  spdlog::info("search: wrote {}", (dir / "genotype.json").string());
}

void cmd_train(const RunConfig& cfg) {
  const Genotype g = read_genotype(cfg.genotype);
  const DatasetSplits data = load(cfg.data, SplitMode::kTrain);
  Network net = instantiate_discrete(g, macro_for(cfg, data), cfg.seed);
  net.set_input_normalization(data.normalization);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const auto log = adversarial_train(net, data, tc, [](const EpochLog& e) {
    spdlog::info("epoch {} lr {:.4g}: train_loss {:.4f} val_nat {:.3f} val_adv {:.3f}", e.epoch, e.lr,
                 e.train_adv_loss, e.val_nat_acc, e.val_adv_acc);
  });
  const EvalReport report = evaluate(net, eval_stream(cfg, data), cfg.attacks, cfg.seed, cfg.eval.batch_size);
  const fs::path dir = out_dir(cfg);
  write_file_atomic((dir / "training_log.csv").string(), training_log_csv(log));
  save_checkpoint((dir / "model.json").string(), net);
  write_file_atomic((dir / "eval_report.json").string(), eval_report_json(report));
  spdlog::info("train: natural accuracy {:.4f}", report.natural_acc);
}

void cmd_eval(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("eval needs a \"checkpoint\"");
  const Network net = load_checkpoint(cfg.checkpoint);
  const DatasetSplits data = load(cfg.data, SplitMode::kTrain);
  check_input_shape(net, data);
  const EvalReport report = evaluate(net, eval_stream(cfg, data), cfg.attacks, cfg.seed, cfg.eval.batch_size);
  const fs::path dir = out_dir(cfg);
  write_file_atomic((dir / "eval_report.json").string(), eval_report_json(report));
  spdlog::info("eval: natural {:.4f}", report.natural_acc);
  for (const auto& a : report.attacks) spdlog::info("eval: {} {:.4f}", a.name, a.accuracy);
}

void cmd_transfer(const RunConfig& cfg) {
  if (cfg.models.empty()) throw ConfigError("transfer needs a non-empty \"models\" list");
  const DatasetSplits data = load(cfg.data, SplitMode::kTrain);
  std::vector<Network> nets;
  for (const auto& [name, path] : cfg.models) {
    nets.push_back(load_checkpoint(path));
    check_input_shape(nets.back(), data);
  }
  const DataStream& stream = eval_stream(cfg, data);
  std::ostringstream csv;
  csv << "source,target,accuracy,attack_success\n" << std::setprecision(17);
  ordered_json matrix;
  matrix["attack"] = attack_to_json(cfg.transfer_attack);
  ordered_json rows = ordered_json::object();
  for (std::size_t s = 0; s < nets.size(); ++s) {
    ordered_json row = ordered_json::object();
    for (std::size_t t = 0; t < nets.size(); ++t) {
      const double acc = transfer_evaluate(nets[s], nets[t], stream, cfg.transfer_attack, cfg.seed,
                                           cfg.eval.batch_size);
      csv << cfg.models[s].first << ',' << cfg.models[t].first << ',' << acc << ',' << 1.0 - acc << '\n';
      row[cfg.models[t].first] = acc;
      spdlog::info("transfer {} -> {}: accuracy {:.4f}", cfg.models[s].first, cfg.models[t].first, acc);
    }
    rows[cfg.models[s].first] = row;
  }
  matrix["accuracy"] = rows;
  const fs::path dir = out_dir(cfg);
  write_file_atomic((dir / "transfer.csv").string(), csv.str());
  write_file_atomic((dir / "transfer.json").string(), matrix.dump(2) + "\n");
}

void cmd_ablate(const RunConfig& cfg) {
  std::ostringstream csv;
  csv << "# desk-scale ablation with reduced search and training settings; the row ordering is\n"
         "# not expected to match the full-scale placement/filter-setting results\n";
  csv << "placement,filters,natural_acc,pgd20_acc,status\n" << std::setprecision(17);
  const fs::path dir = out_dir(cfg);
  for (const GridEntry& e : cfg.grid) {
    MacroConfig macro = cfg.macro;
    macro.placement = e.placement;
    macro.filter_setting = e.filters;
    const std::string p = placement_string(e.placement);
    const std::string f = filter_string(e.filters);
    try {
      const Outcome o = search_train_evaluate(cfg, macro);
      csv << p << ',' << f << ',' << o.natural_acc << ',' << o.pgd20_acc << ",ok\n";
      write_file_atomic((dir / ("genotype_" + p + "_" + f + ".json")).string(), serialize_genotype(o.genotype));
      spdlog::info("ablate {} {}: natural {:.4f} pgd20 {:.4f}", p, f, o.natural_acc, o.pgd20_acc);
    } catch (const std::exception& ex) {
      spdlog::error("ablate {} {} failed: {}", p, f, ex.what());
      csv << p << ',' << f << ",,,failed\n";
    }
  }
  write_file_atomic((dir / "ablation.csv").string(), csv.str());
}

void cmd_stats(const RunConfig& cfg, const std::vector<std::string>& extra_files) {
  std::vector<std::string> files = cfg.genotypes;
  files.insert(files.end(), extra_files.begin(), extra_files.end());
  std::vector<Genotype> corpus;
  for (const std::string& f : files) {
    try {
      corpus.push_back(parse_genotype(read_file(f)));
    } catch (const std::exception& ex) {
      spdlog::warn("stats: skipping {}: {}", f, ex.what());
    }
  }
  if (corpus.empty()) throw std::runtime_error("stats: no parseable genotype files");
  const fs::path dir = out_dir(cfg);
  write_file_atomic((dir / "stats.csv").string(), op_counts_csv(count_operations(corpus)));
  spdlog::info("stats: {} genotypes", corpus.size());
}

void cmd_flops(const RunConfig& cfg) {
  MacroConfig m = cfg.macro;
  m.num_classes = cfg.data.num_classes;
  m.input_shape = InputShape{3, cfg.data.image_size, cfg.data.image_size};
  const Network net = cfg.genotype.empty() ? init_supernet(m, CellTopology(4), cfg.seed)
                                           : instantiate_discrete(read_genotype(cfg.genotype), m, cfg.seed);
  const ModelStats s = analytic_stats(net);
  ordered_json j;
  j["network"] = cfg.genotype.empty() ? "supernet" : "discrete";
  j["params"] = s.params;
  j["macs"] = s.macs;
  j["pool_ops"] = s.pool_ops;
  j["norm_ops"] = s.norm_ops;
  j["flops"] = s.flops();
  const fs::path dir = out_dir(cfg);
  write_file_atomic((dir / "flops.json").string(), j.dump(2) + "\n");
  spdlog::info("flops: params {} flops {}", s.params, s.flops());
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"search", "train", "eval", "transfer", "ablate", "stats", "flops"};
  return names;
}

int run_command(const std::string& name, const RunConfig& cfg, const std::vector<std::string>& extra_files) {
  try {
    if (name == "search") {
      cmd_search(cfg);
    } else if (name == "train") {
      cmd_train(cfg);
    } else if (name == "eval") {
      cmd_eval(cfg);
    } else if (name == "transfer") {
      cmd_transfer(cfg);
    } else if (name == "ablate") {
      cmd_ablate(cfg);
    } else if (name == "stats") {
      cmd_stats(cfg, extra_files);
    } else if (name == "flops") {
      cmd_flops(cfg);
    } else {
      throw ConfigError("unknown command \"" + name + "\"");
    }
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{} failed: {}", name, e.what());
    return 1;
  }
  return 0;
}

}  // namespace arnas::cli
