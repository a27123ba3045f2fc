#include "graphstad/transfer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "graphstad/errors.hpp"

namespace graphstad {

using nlohmann::json;

namespace {

std::string squash(const std::string& s) {
  std::string out;
  for (char c : s)
    if (std::isalnum(static_cast<unsigned char>(c))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool in_block(const std::string& name, const std::vector<std::string>& prefixes) {
  return std::any_of(prefixes.begin(), prefixes.end(),
                     [&](const std::string& p) { return name.compare(0, p.size() + 1, p + ".") == 0; });
}

}  // namespace

std::string to_string(InitMode m) {
  switch (m) {
    case InitMode::Random: return "RANDOM";
    case InitMode::TL4: return "TL-4";
    case InitMode::TL7: return "TL-7";
  }
  return "?";
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::NoTL: return "No-TL";
    case TrainMode::TL1: return "TL-1";
    case TrainMode::TL2: return "TL-2";
    case TrainMode::TL2d: return "TL-2d";
    case TrainMode::TL3: return "TL-3";
    case TrainMode::TL4: return "TL-4";
    case TrainMode::TL5: return "TL-5";
    case TrainMode::TL6: return "TL-6";
  }
  return "?";
}

InitMode init_mode_from_string(const std::string& s) {
  const auto k = squash(s);
  if (k == "random") return InitMode::Random;
  if (k == "tl4") return InitMode::TL4;
  if (k == "tl7") return InitMode::TL7;
  throw ConfigError("unknown init mode '" + s + "'");
}

TrainMode train_mode_from_string(const std::string& s) {
  static const std::pair<const char*, TrainMode> table[] = {
      {"notl", TrainMode::NoTL}, {"tl1", TrainMode::TL1},   {"tl2", TrainMode::TL2}, {"tl2d", TrainMode::TL2d},
      {"tl3", TrainMode::TL3},   {"tl4", TrainMode::TL4},   {"tl5", TrainMode::TL5}, {"tl6", TrainMode::TL6}};
  const auto k = squash(s);
  for (const auto& [name, mode] : table)
    if (k == name) return mode;
  throw ConfigError("unknown train mode '" + s + "'");
}

void TLConfig::validate() const {
  bool ok = false;
  switch (init_mode) {
    case InitMode::Random:
      ok = train_mode == TrainMode::NoTL;
      break;
    case InitMode::TL4:
      ok = train_mode == TrainMode::NoTL || train_mode == TrainMode::TL1 || train_mode == TrainMode::TL2 ||
           train_mode == TrainMode::TL2d || train_mode == TrainMode::TL3 || train_mode == TrainMode::TL4;
      break;
    case InitMode::TL7:
      ok = train_mode == TrainMode::TL5 || train_mode == TrainMode::TL6;
      break;
  }
  if (!ok)
    throw ConfigError("unsupported transfer combination init=" + to_string(init_mode) +
                      " train=" + to_string(train_mode));
  if ((unfreeze_bn || unfreeze_bias) && train_mode == TrainMode::NoTL)
    throw ConfigError("BN/bias exceptions need a train mode that freezes something");
  if (unfreeze_bias && !unfreeze_bn) throw ConfigError("unfreeze_bias is only supported together with unfreeze_bn");
}

json TLConfig::to_json() const {
  return {{"init_mode", to_string(init_mode)},
          {"train_mode", to_string(train_mode)},
          {"unfreeze_bn", unfreeze_bn},
          {"unfreeze_bias", unfreeze_bias}};
}

TLConfig TLConfig::from_json(const json& j) {
  TLConfig c;
  c.init_mode = init_mode_from_string(j.value("init_mode", std::string("random")));
  c.train_mode = train_mode_from_string(j.value("train_mode", std::string("no-tl")));
  c.unfreeze_bn = j.value("unfreeze_bn", false);
  c.unfreeze_bias = j.value("unfreeze_bias", false);
  return c;
}

std::vector<std::string> init_blocks(InitMode m) {
  switch (m) {
    case InitMode::Random: return {};
    case InitMode::TL4: return {"encoder.cnn", "encoder.gnn", "decoder.cnn"};
    case InitMode::TL7:
      return {"encoder.cnn", "encoder.gnn", "encoder.rnn", "encoder.vae", "encoder.fc",
              "decoder.cnn", "decoder.rnn", "decoder.fc"};
  }
  return {};
}

std::vector<std::string> freeze_prefixes(TrainMode m) {
  switch (m) {
    case TrainMode::NoTL: return {};
    case TrainMode::TL1: return {"encoder.gnn"};
    case TrainMode::TL2: return {"encoder.cnn"};
    case TrainMode::TL2d: return {"decoder.cnn"};
    case TrainMode::TL3: return {"encoder.cnn", "encoder.gnn"};
    case TrainMode::TL4: return {"encoder.cnn", "encoder.gnn", "decoder.cnn"};
    case TrainMode::TL5: return {"encoder.cnn", "encoder.gnn", "encoder.rnn", "encoder.vae", "encoder.fc"};
    case TrainMode::TL6:
      return {"encoder.cnn", "encoder.gnn", "encoder.rnn", "encoder.vae", "encoder.fc", "decoder.rnn"};
  }
  return {};
}

json TransferReport::to_json() const {
  return {{"copied", copied}, {"skipped_shape", skipped_shape}, {"skipped_missing", skipped_missing}};
}

TransferReport transfer_init(const ParameterStore& source, ParameterStore& target, InitMode mode) {
  TransferReport report;
  const auto blocks = init_blocks(mode);
  if (blocks.empty()) return report;
  for (const auto& b : blocks) {
    auto has = [&](const ParameterStore& s) {
      return std::any_of(s.begin(), s.end(), [&](const auto& e) { return in_block(e.first, {b}); });
    };
    if (!has(source) && !has(target))
      throw ConfigError("init mode " + to_string(mode) + " references block " + b + " absent from both models");
  }
  std::set<std::string> names;
  for (const auto& [name, e] : source)
    if (in_block(name, blocks)) names.insert(name);
  for (const auto& [name, e] : target)
    if (in_block(name, blocks)) names.insert(name);
  for (const auto& name : names) {
    if (!source.contains(name) || !target.contains(name)) {
      report.skipped_missing.push_back(name);
      continue;
    }
    const auto& src = source.tensor(name);
    if (src.shape != target.tensor(name).shape) {
      report.skipped_shape.push_back(name);
      continue;
    }
    target.assign(name, src);
    report.copied.push_back(name);
  }
  return report;
}

void apply_freeze(ParameterStore& store, const TLConfig& cfg) {
  cfg.validate();
  const auto prefixes = freeze_prefixes(cfg.train_mode);
  for (const auto& p : prefixes) {
    const bool hit =
        std::any_of(store.begin(), store.end(), [&](const auto& e) { return in_block(e.first, {p}); });
    if (!hit) throw ConfigError("freeze prefix " + p + " matches no parameter");
  }
  for (auto& [name, entry] : store) {
    const auto kind = ParamName::parse(name).kind;
    if (is_running_stat(kind)) continue;
    bool trainable = !in_block(name, prefixes);
    if (!trainable && cfg.unfreeze_bn && (kind == ParamKind::BnScale || kind == ParamKind::BnShift)) trainable = true;
    if (!trainable && cfg.unfreeze_bias && kind == ParamKind::Bias) trainable = true;
    entry.trainable = trainable;
  }
}

TrainableCount count_trainable(const ParameterStore& store) {
  TrainableCount c;
  for (const auto& [name, entry] : store) {
    if (is_running_stat(ParamName::parse(name).kind)) continue;
    c.total += entry.tensor.size();
    if (entry.trainable) c.trainable += entry.tensor.size();
  }
  c.reduction = c.total ? 1.0 - static_cast<double>(c.trainable) / static_cast<double>(c.total) : 0.0;
  return c;
}

}  // namespace graphstad
