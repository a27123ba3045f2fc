#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>

#include "graphstad/tensor.hpp"

namespace graphstad {

enum class ParamKind { Weight, Bias, BnScale, BnShift, BnRunningMean, BnRunningVar };

std::string to_string(ParamKind k);

/// Parsed `<component>.<block>.<layer_idx>.<param_kind>` parameter name.
struct ParamName {
  std::string component;  ///< encoder | decoder
  std::string block;      ///< cnn | gnn | rnn | vae | fc
  int layer = 0;
  ParamKind kind = ParamKind::Weight;

  /// Throws ValidationError on names outside the grammar.
  static ParamName parse(std::string_view name);
  std::string str() const;
  /// `<component>.<block>.<layer_idx>`
  std::string layer_prefix() const;
};

bool is_running_stat(ParamKind k) noexcept;

struct ParamEntry {
  Tensor tensor;
  bool trainable = true;
};

/// Named parameter tensors with trainable flags, iterated in sorted-name order.
class ParameterStore {
 public:
  using Map = std::map<std::string, ParamEntry, std::less<>>;

  /// Validates the name grammar and finiteness; running BN statistics are
  /// always stored as non-trainable.
  void insert(const std::string& name, Tensor tensor, bool trainable = true);

  bool contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }
  const ParamEntry& at(std::string_view name) const;
  ParamEntry& at(std::string_view name);
  const Tensor& tensor(std::string_view name) const { return at(name).tensor; }

  /// Rejects enabling training on running statistics.
  void set_trainable(std::string_view name, bool trainable);
  /// Overwrites values keeping the shape; throws on shape mismatch.
  void assign(std::string_view name, const Tensor& value);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }
  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }

  /// Total number of scalar elements over every entry.
  std::size_t element_count() const;
  /// Rounds every value to the nearest 32-bit float (the on-disk precision).
  void round_to_float32();

  bool operator==(const ParameterStore& other) const;

 private:
  Map entries_;
};

}  // namespace graphstad
