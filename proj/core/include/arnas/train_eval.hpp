#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "arnas/attacks.hpp"
#include "arnas/data.hpp"
#include "arnas/model_stats.hpp"
#include "arnas/network.hpp"

namespace arnas {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 32;
  double lr = 0.1;  // 0.01 for SVHN-like data
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int> lr_decay_epochs{100, 150};
  double lr_decay_factor = 0.1;
  /// false trains on natural inputs (the standard-training baseline).
  bool adversarial = true;
  AttackConfig attack = AttackConfig::pgd(7, 8.0 / 255.0, 0.01, true);
  std::uint64_t seed = 0;

  /// Decay epochs must be increasing and below `epochs` (checked when
  /// epochs > 0).
  void validate() const;
  double lr_at(int epoch) const;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_adv_loss = 0.0;  // mean loss over the epoch's training batches
  double val_nat_acc = 0.0;
  double val_adv_acc = 0.0;
};

using EpochProgress = std::function<void(const EpochLog&)>;

/// Trains `net` in place: per batch, attack examples are generated against
/// the current weights and one SGD step is taken on their cross-entropy.
/// Attack randomness depends only on (seed, epoch, batch), so an epsilon-0
/// attack reproduces natural training exactly.
std::vector<EpochLog> adversarial_train(Network& net, const DatasetSplits& data,
                                        const TrainConfig& cfg,
                                        const EpochProgress& progress = {});

struct AttackAccuracy {
  std::string name;
  double accuracy = 0.0;
  bool operator==(const AttackAccuracy&) const = default;
};

struct EvalReport {
  double natural_acc = 0.0;
  std::vector<AttackAccuracy> attacks;  // in the order requested
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  // runtime metadata
  int num_samples = 0;
  int batch_size = 0;
  std::uint64_t seed = 0;

  double accuracy(const std::string& attack_name) const;
  bool operator==(const EvalReport&) const = default;
};

/// JSON with keys natural_acc, attacks (name -> accuracy, request order),
/// params, flops, metadata.
std::string eval_report_json(const EvalReport& report);

/// Fraction of correct argmax predictions with running normalization stats.
double accuracy(const Network& net, const Tensor& images, std::span<const int> labels);

/// White-box evaluation: each attack is generated against `net` itself.
/// Attack names must be unique.
EvalReport evaluate(const Network& net, const DataStream& data,
                    const std::vector<AttackConfig>& attacks, std::uint64_t seed = 0,
                    int batch_size = 100);

/// Accuracy of `target` on examples crafted against `source`. The random
/// start of batch b uses the same seed as evaluate(), so source == target
/// reproduces the white-box number. Throws std::invalid_argument when the
/// input shapes differ.
double transfer_evaluate(const Network& source, const Network& target, const DataStream& data,
                         const AttackConfig& attack, std::uint64_t seed = 0,
                         int batch_size = 100);

/// CSV with header epoch,lr,train_adv_loss,val_nat_acc,val_adv_acc
std::string training_log_csv(const std::vector<EpochLog>& log);

}  // namespace arnas
