#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "graphstad/parameter_store.hpp"

namespace graphstad {

enum class InitMode { Random, TL4, TL7 };
enum class TrainMode { NoTL, TL1, TL2, TL2d, TL3, TL4, TL5, TL6 };

std::string to_string(InitMode m);
std::string to_string(TrainMode m);
/// Accepts "TL-7", "tl7", "random", "no-tl", "NoTL", "tl2d", ...
InitMode init_mode_from_string(const std::string& s);
TrainMode train_mode_from_string(const std::string& s);

/// Transfer policy: which source blocks seed the target and which target
/// blocks stay frozen while fine-tuning.
struct TLConfig {
  InitMode init_mode = InitMode::Random;
  TrainMode train_mode = TrainMode::NoTL;
  bool unfreeze_bn = false;    ///< BN scale/shift (and running stats) of frozen blocks keep training
  bool unfreeze_bias = false;  ///< biases of frozen blocks keep training; requires unfreeze_bn

  /// Throws ConfigError for combinations outside the supported table.
  void validate() const;
  nlohmann::json to_json() const;
  static TLConfig from_json(const nlohmann::json& j);
};

/// Block prefixes (`component.block`) copied by an init mode.
std::vector<std::string> init_blocks(InitMode m);
/// Block prefixes frozen by a train mode.
std::vector<std::string> freeze_prefixes(TrainMode m);

struct TransferReport {
  std::vector<std::string> copied;
  std::vector<std::string> skipped_shape;    ///< in both stores, shapes differ
  std::vector<std::string> skipped_missing;  ///< in the block set of only one store

  nlohmann::json to_json() const;
};

/// Copies every same-name, same-shape entry of the init mode's block set
/// from `source` into `target`. Entries outside the block set are untouched.
TransferReport transfer_init(const ParameterStore& source, ParameterStore& target, InitMode mode);

/// Sets trainable flags from the train mode's freeze set and the BN/bias
/// exceptions. Throws ConfigError when a frozen prefix matches no entry.
void apply_freeze(ParameterStore& store, const TLConfig& cfg);

struct TrainableCount {
  std::size_t trainable = 0;
  std::size_t total = 0;      ///< every element except BN running statistics
  double reduction = 0.0;     ///< 1 - trainable / total
};

TrainableCount count_trainable(const ParameterStore& store);

}  // namespace graphstad
