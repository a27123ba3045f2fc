#include "graphstad/parameter_store.hpp"

#include <cmath>
#include <regex>

#include "graphstad/errors.hpp"

namespace graphstad {

std::string to_string(ParamKind k) {
  switch (k) {
    case ParamKind::Weight: return "weight";
    case ParamKind::Bias: return "bias";
    case ParamKind::BnScale: return "bn_scale";
    case ParamKind::BnShift: return "bn_shift";
    case ParamKind::BnRunningMean: return "bn_running_mean";
    case ParamKind::BnRunningVar: return "bn_running_var";
  }
  return "weight";
}

bool is_running_stat(ParamKind k) noexcept {
  return k == ParamKind::BnRunningMean || k == ParamKind::BnRunningVar;
}

ParamName ParamName::parse(std::string_view name) {
  static const std::regex grammar(
      R"(^(encoder|decoder)\.(cnn|gnn|rnn|vae|fc)\.(0|[1-9][0-9]*)\.(weight|bias|bn_scale|bn_shift|bn_running_mean|bn_running_var)$)");
  std::cmatch m;
  if (!std::regex_match(name.data(), name.data() + name.size(), m, grammar))
    throw ValidationError("parameter name '" + std::string(name) +
                          "' does not match <encoder|decoder>.<cnn|gnn|rnn|vae|fc>.<idx>.<kind>");
  ParamName out;
  out.component = m[1].str();
  out.block = m[2].str();
  out.layer = std::stoi(m[3].str());
  const auto kind = m[4].str();
  if (kind == "weight") out.kind = ParamKind::Weight;
  else if (kind == "bias") out.kind = ParamKind::Bias;
  else if (kind == "bn_scale") out.kind = ParamKind::BnScale;
  else if (kind == "bn_shift") out.kind = ParamKind::BnShift;
  else if (kind == "bn_running_mean") out.kind = ParamKind::BnRunningMean;
  else out.kind = ParamKind::BnRunningVar;
  return out;
}

std::string ParamName::layer_prefix() const { return component + "." + block + "." + std::to_string(layer); }

std::string ParamName::str() const { return layer_prefix() + "." + to_string(kind); }

void ParameterStore::insert(const std::string& name, Tensor tensor, bool trainable) {
  const auto parsed = ParamName::parse(name);
  if (entries_.count(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  if (tensor.data.size() != numel(tensor.shape))
    throw ValidationError("parameter '" + name + "' data size does not match shape " + shape_str(tensor.shape));
  for (double v : tensor.data)
    if (!std::isfinite(v)) throw ValidationError("parameter '" + name + "' contains a non-finite value");
  if (is_running_stat(parsed.kind)) trainable = false;
  entries_.emplace(name, ParamEntry{std::move(tensor), trainable});
}

const ParamEntry& ParameterStore::at(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

ParamEntry& ParameterStore::at(std::string_view name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

void ParameterStore::set_trainable(std::string_view name, bool trainable) {
  auto& e = at(name);
  if (trainable && is_running_stat(ParamName::parse(name).kind))
    throw ValidationError("running statistics '" + std::string(name) + "' cannot be trainable");
  e.trainable = trainable;
}

void ParameterStore::assign(std::string_view name, const Tensor& value) {
  auto& e = at(name);
  if (e.tensor.shape != value.shape)
    throw ValidationError("shape mismatch assigning '" + std::string(name) + "': " + shape_str(e.tensor.shape) +
                          " vs " + shape_str(value.shape));
  e.tensor.data = value.data;
}

std::size_t ParameterStore::element_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.tensor.size();
  return n;
}

void ParameterStore::round_to_float32() {
  for (auto& [_, e] : entries_)
    for (double& v : e.tensor.data) v = static_cast<double>(static_cast<float>(v));
}

bool ParameterStore::operator==(const ParameterStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  auto a = entries_.begin();
  auto b = other.entries_.begin();
  for (; a != entries_.end(); ++a, ++b) {
    if (a->first != b->first || a->second.trainable != b->second.trainable || !(a->second.tensor == b->second.tensor))
      return false;
  }
  return true;
}

}  // namespace graphstad
