#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "arnas/checkpoint.hpp"
#include "cli/commands.hpp"
#include "cli/run_config.hpp"
#include "test_support.hpp"

namespace arnas::cli {
namespace {

using nlohmann::json;

int run_binary(const std::string& args) {
  const std::string cmd = std::string(ARNAS_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string write_config(const std::filesystem::path& dir, const json& j) {
  const auto path = dir / "config.json";
  std::ofstream(path) << j.dump(2);
  return path.string();
}

TEST(RunConfig, DefaultsAndOverrides) {
  const RunConfig d = parse_run_config(json::object());
  EXPECT_EQ(d.attacks.size(), 3u);
  EXPECT_EQ(d.attacks[1].name, "pgd20");
  EXPECT_EQ(d.grid.size(), 6u);

  const json j = {{"seed", 7},
                  {"data", "synthetic://blobs?classes=3&n=8&size=8"},
                  {"macro", {{"num_cells", 5}, {"placement", "R-A-R"}, {"filters", "1-2-4"}}},
                  {"search", {{"lambda", 0.5}, {"attack", {{"epsilon", "8/255"}, {"steps", 3}}}, {"arch_optimizer", "gd"}}},
                  {"train", {{"epochs", 4}, {"lr_decay_epochs", {2, 3}}, {"adversarial", false}}},
                  {"attacks", {{{"name", "fgsm"}, {"epsilon", "4/255"}}, {{"steps", 10}}}}};
  const RunConfig c = parse_run_config(j);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.data.per_class_limit, 8);
  EXPECT_EQ(c.macro.num_cells, 5);
  EXPECT_EQ(placement_string(c.macro.placement), "R-A-R");
  EXPECT_EQ(c.search.arch_optimizer, ArchOptimizerKind::kGradientDescent);
  EXPECT_DOUBLE_EQ(c.search.attack.epsilon, 8.0 / 255.0);
  EXPECT_EQ(c.search.attack.steps, 3);
  EXPECT_FALSE(c.train.adversarial);
  ASSERT_EQ(c.attacks.size(), 2u);
  EXPECT_EQ(c.attacks[0].name, "fgsm");
  EXPECT_DOUBLE_EQ(c.attacks[0].epsilon, 4.0 / 255.0);
  EXPECT_EQ(c.attacks[1].name, "pgd10");
}

TEST(RunConfig, RejectsBadDocuments) {
  EXPECT_THROW(parse_run_config(json{{"sed", 1}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"search", {{"lamda", 0.1}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"search", {{"lambda", -1}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"search", {{"arch_optimizer", "sgd"}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"train", {{"lr_decay_epochs", {150, 100}}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"macro", {{"num_cells", "eight"}}}}), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"attacks", {{{"name", "fgsm"}, {"steps", 3}}}}}), ConfigError);
  EXPECT_THROW(parse_number(json("1/0"), "x"), ConfigError);
  EXPECT_THROW(parse_number(json("abc"), "x"), ConfigError);
  EXPECT_DOUBLE_EQ(parse_number(json("2/255"), "x"), 2.0 / 255.0);
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST(RunConfig, RelativePathsResolveAgainstTheConfigFile) {
  const auto dir = testing::scratch_dir("cli_paths");
  write_file_atomic((dir / "g.json").string(), serialize_genotype(testing::uniform_genotype(OpKind::kSkipConnect)));
  const std::string path = write_config(dir, json{{"genotype", "g.json"}, {"out", "results"}});
  const RunConfig c = load_run_config(path);
  EXPECT_EQ(c.genotype, (dir / "g.json").string());
}

TEST(Stats, CountsEveryRoleAndOp) {
  std::vector<Genotype> corpus{testing::uniform_genotype(OpKind::kSepConv3x3),
                               testing::uniform_genotype(OpKind::kSkipConnect)};
  corpus[1].cell(CellRole::kRobust)[0].op = OpKind::kMaxPool3x3;
  const OpCounts c = count_operations(corpus);
  for (CellRole r : kAllRoles) {
    int total = 0;
    for (int op = 0; op < kNumOps; ++op) total += c[static_cast<int>(r)][op];
    EXPECT_EQ(total, 16);
    EXPECT_EQ(c[static_cast<int>(r)][0], 0);
  }
  EXPECT_EQ(c[1][static_cast<int>(OpKind::kMaxPool3x3)], 1);
  EXPECT_EQ(c[1][static_cast<int>(OpKind::kSkipConnect)], 7);
  const std::string csv = op_counts_csv(c);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "role,op,count");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + kNumRoles * kNumOps);
}

TEST(Stats, CommandSkipsUnreadableFiles) {
  const auto dir = testing::scratch_dir("cli_stats");
  const std::string good = (dir / "a.json").string();
  write_file_atomic(good, serialize_genotype(testing::uniform_genotype(OpKind::kAvgPool3x3)));
  RunConfig cfg;
  cfg.out = (dir / "out").string();
  EXPECT_EQ(run_command("stats", cfg, {good, (dir / "missing.json").string()}), 0);
  const std::string csv = read_file((dir / "out" / "stats.csv").string());
  EXPECT_NE(csv.find("reduction,avg_pool_3x3,8"), std::string::npos);
  EXPECT_EQ(run_command("stats", cfg, {(dir / "missing.json").string()}), 1);
}

TEST(Binary, ExitCodes) {
  const auto dir = testing::scratch_dir("cli_exit");
  EXPECT_EQ(run_binary("--help"), 0);
  EXPECT_EQ(run_binary("frobnicate"), 2);
  EXPECT_EQ(run_binary("search --config " + (dir / "none.json").string()), 2);
  EXPECT_EQ(run_binary("search --config " + write_config(dir, json{{"bogus", 1}})), 2);
  EXPECT_EQ(run_binary("train --out " + (dir / "o").string()), 2);  // no genotype given
  EXPECT_EQ(run_binary("stats --out " + (dir / "o").string() + " " + (dir / "none.json").string()), 1);
}

TEST(Binary, ZeroEpochSearchIsDeterministic) {
  const auto dir = testing::scratch_dir("cli_search");
  const std::string cfg = write_config(
      dir, json{{"data", "synthetic://blobs?classes=3&n=4&size=8"},
                {"macro", {{"num_cells", 3}, {"init_channels", 2}}},
                {"search", {{"batch_size", 4}}}});
  ASSERT_EQ(run_binary("search -q --epochs 0 --seed 3 --config " + cfg + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run_binary("search -q --epochs 0 --seed 3 --config " + cfg + " --out " + (dir / "b").string()), 0);
  const std::string ga = read_file((dir / "a" / "genotype.json").string());
  EXPECT_EQ(ga, read_file((dir / "b" / "genotype.json").string()));
  EXPECT_NO_THROW(parse_genotype(ga));
  EXPECT_EQ(read_file((dir / "a" / "history.csv").string()),
            "epoch,step,nat_val_loss,adv_val_loss,gamma_star,grad_norm_theta,grad_norm_theta_bar\n");
  const json alpha = json::parse(read_file((dir / "a" / "alpha.json").string()));
  EXPECT_EQ(alpha.at("accurate").size(), 14u);
}

TEST(Binary, FlopsReport) {
  const auto dir = testing::scratch_dir("cli_flops");
  const std::string cfg = write_config(
      dir, json{{"data", "synthetic://blobs?classes=3&n=4&size=16"},
                {"macro", {{"num_cells", 8}, {"init_channels", 4}}}});
  ASSERT_EQ(run_binary("flops -q --config " + cfg + " --out " + dir.string()), 0);
  const json j = json::parse(read_file((dir / "flops.json").string()));
  EXPECT_EQ(j.at("params").get<std::uint64_t>(), 118943u);
}

}  // namespace
}  // namespace arnas::cli
