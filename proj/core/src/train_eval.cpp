#include "arnas/train_eval.hpp"

#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "arnas/optim.hpp"
#include "arnas/seed.hpp"

namespace arnas {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train lr must be positive");
  if (momentum < 0.0 || weight_decay < 0.0) throw ConfigError("momentum and weight_decay must be >= 0");
  if (!(lr_decay_factor > 0.0)) throw ConfigError("lr_decay_factor must be positive");
  for (std::size_t i = 0; i < lr_decay_epochs.size(); ++i) {
    if (i > 0 && lr_decay_epochs[i] <= lr_decay_epochs[i - 1])
      throw ConfigError("lr_decay_epochs must be increasing");
    if (epochs > 0 && (lr_decay_epochs[i] < 1 || lr_decay_epochs[i] >= epochs))
      throw ConfigError("lr decay epoch " + std::to_string(lr_decay_epochs[i]) +
                        " is not inside (0, " + std::to_string(epochs) + ")");
  }
  attack.validate();
}

double TrainConfig::lr_at(int epoch) const {
  double r = lr;
  for (int e : lr_decay_epochs)
    if (epoch >= e) r *= lr_decay_factor;
  return r;
}

namespace {

constexpr std::uint64_t kTrainAttackStream = 0x7a11;

int count_correct(const Tensor& logits, std::span<const int> labels) {
  const int k = logits.shape().c;
  int correct = 0;
  for (int n = 0; n < logits.shape().n; ++n) {
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (logits.at(n, j, 0, 0) > logits.at(n, best, 0, 0)) best = j;
    if (best == labels[n]) ++correct;
  }
  return correct;
}

constexpr ForwardOptions kEval{NormMode::kRunning, false};

}  // namespace

double accuracy(const Network& net, const Tensor& images, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  return static_cast<double>(count_correct(net.forward(images, kEval), labels)) /
         static_cast<double>(labels.size());
}

std::vector<EpochLog> adversarial_train(Network& net, const DatasetSplits& data,
                                        const TrainConfig& cfg, const EpochProgress& progress) {
  cfg.validate();
  std::vector<EpochLog> log;
  SgdMomentum opt(cfg.momentum, cfg.weight_decay);
  const int steps = data.train.num_batches(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    double loss_sum = 0.0;
    for (int step = 0; step < steps; ++step) {
      const Batch b = data.train.batch(epoch, step, cfg.batch_size);
      Tensor x = b.images;
      if (cfg.adversarial) {
        NetworkClassifier model(net, NormMode::kBatch);
        const std::uint64_t seed = derive_seed(
            derive_seed(cfg.seed, kTrainAttackStream),
            (static_cast<std::uint64_t>(epoch) << 32) | static_cast<std::uint64_t>(step));
        x = pgd(model, b.images, b.labels, cfg.attack, seed);
      }
      GradRequest req;
      req.weights = true;
      const GradResult g =
          net.gradients_train(x, b.labels, req, ForwardOptions{NormMode::kBatch, true});
      if (!std::isfinite(g.loss)) {
        throw std::runtime_error("non-finite training loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(step) + " (lr " +
                                 std::to_string(lr) + ")");
      }
      loss_sum += g.loss;
      std::vector<double> w = net.weights().flatten();
      opt.step(w, g.weights.flatten(), lr);
      net.weights().assign_flat(w);
    }
    EpochLog entry{epoch, lr, steps > 0 ? loss_sum / steps : 0.0, 0.0, 0.0};
    if (data.val.size() > 0) {
      const EvalReport r = evaluate(net, data.val, {cfg.attack}, cfg.seed, 100);
      entry.val_nat_acc = r.natural_acc;
      entry.val_adv_acc = r.attacks.front().accuracy;
    }
    log.push_back(entry);
    if (progress) progress(entry);
  }
  return log;
}

double EvalReport::accuracy(const std::string& attack_name) const {
  for (const auto& a : attacks)
    if (a.name == attack_name) return a.accuracy;
  throw std::out_of_range("no attack named " + attack_name + " in the report");
}

std::string eval_report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["natural_acc"] = r.natural_acc;
  nlohmann::ordered_json attacks = nlohmann::ordered_json::object();
  for (const auto& a : r.attacks) attacks[a.name] = a.accuracy;
  j["attacks"] = attacks;
  j["params"] = r.params;
  j["flops"] = r.flops;
  j["metadata"] = {{"num_samples", r.num_samples}, {"batch_size", r.batch_size}, {"seed", r.seed},
                   {"normalization", "running"}, {"flops_convention", "2*macs+pool+norm"}};
  return j.dump(2) + "\n";
}

EvalReport evaluate(const Network& net, const DataStream& data,
                    const std::vector<AttackConfig>& attacks, std::uint64_t seed,
                    int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be >= 1");
  std::set<std::string> names;
  for (const auto& a : attacks) {
    a.validate();
    if (!names.insert(a.name).second)
      throw std::invalid_argument("evaluate: duplicate attack name " + a.name);
  }
  const NetworkClassifier model(net, NormMode::kRunning);
  const Batch all = data.all();
  std::vector<int> correct(attacks.size(), 0);
  int natural = 0;
  const int n = all.size();
  for (int start = 0, b = 0; start < n; start += batch_size, ++b) {
    const int count = std::min(batch_size, n - start);
    const Tensor x = all.images.slice_batch(start, start + count);
    const std::span<const int> y(all.labels.data() + start, count);
    natural += count_correct(net.forward(x, kEval), y);
    const std::uint64_t batch_seed = derive_seed(seed, static_cast<std::uint64_t>(b));
    for (std::size_t a = 0; a < attacks.size(); ++a) {
      const Tensor adv = attack(model, x, y, attacks[a], batch_seed);
      correct[a] += count_correct(net.forward(adv, kEval), y);
    }
  }
  EvalReport r;
  const double denom = n > 0 ? static_cast<double>(n) : 1.0;
  r.natural_acc = natural / denom;
  for (std::size_t a = 0; a < attacks.size(); ++a)
    r.attacks.push_back({attacks[a].name, correct[a] / denom});
  const ModelStats stats = analytic_stats(net);
  r.params = stats.params;
  r.flops = stats.flops();
  r.num_samples = n;
  r.batch_size = batch_size;
  r.seed = seed;
  return r;
}

double transfer_evaluate(const Network& source, const Network& target, const DataStream& data,
                         const AttackConfig& attack_cfg, std::uint64_t seed, int batch_size) {
  if (!(source.macro().input_shape == target.macro().input_shape)) {
    throw std::invalid_argument("transfer_evaluate: source and target input shapes differ");
  }
  if (batch_size < 1) throw std::invalid_argument("transfer_evaluate: batch_size must be >= 1");
  attack_cfg.validate();
  const NetworkClassifier model(source, NormMode::kRunning);
  const Batch all = data.all();
  const int n = all.size();
  int correct = 0;
  for (int start = 0, b = 0; start < n; start += batch_size, ++b) {
    const int count = std::min(batch_size, n - start);
    const Tensor x = all.images.slice_batch(start, start + count);
    const std::span<const int> y(all.labels.data() + start, count);
    const Tensor adv = attack(model, x, y, attack_cfg, derive_seed(seed, static_cast<std::uint64_t>(b)));
    correct += count_correct(target.forward(adv, kEval), y);
  }
  return n > 0 ? static_cast<double>(correct) / n : 0.0;
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,lr,train_adv_loss,val_nat_acc,val_adv_acc\n" << std::setprecision(17);
  for (const EpochLog& e : log) {
    out << e.epoch << ',' << e.lr << ',' << e.train_adv_loss << ',' << e.val_nat_acc << ','
        << e.val_adv_acc << '\n';
  }
  return out.str();
}

}  // namespace arnas
