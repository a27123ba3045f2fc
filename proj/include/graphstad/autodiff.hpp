#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Graph records every operation in creation order; backward() walks the
// nodes in reverse, which is a valid topological order by construction.
// Nodes that do not depend on a gradient-requiring leaf carry no closure.

#include <array>
#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "graphstad/tensor.hpp"

namespace graphstad::ad {

class Graph;

/// Handle to a node of a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const noexcept { return graph_ != nullptr; }
  Graph* graph() const noexcept { return graph_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  /// Scalar value of a 1-element node.
  double item() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(const Tensor& grad_out)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad);

  /// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
  void backward(Var root);
  /// Gradient of the last backward() root w.r.t. `v`; zeros when unreached.
  Tensor grad(Var v) const;

  // Op construction interface.
  Var make(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var make(Tensor value, const std::vector<Var>& parents, BackwardFn fn);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient accumulator of a node, zero-initialised on first use.
  Tensor& grad_buffer(std::size_t id);
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  bool grad_enabled_;
  std::deque<Node> nodes_;
};

// Elementwise.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var exp(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var elu(Var a);
Var reshape(Var a, Shape shape);

/// Linear combination of scalar nodes.
Var weighted_sum(const std::vector<std::pair<Var, double>>& terms);

// Dense layers on row-major 2D tensors.
/// x [N, in] · wᵀ [in, out] + b → [N, out]. `b` may be invalid (no bias).
Var linear(Var x, Var w, Var b);
/// Concatenates [N, p_k] tensors along columns.
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t start, std::size_t len);
/// Selects rows n·T + t for n in [0, N) from an [N·T, E] tensor → [N, E].
Var time_slice(Var a, std::size_t T, std::size_t t);
/// Inverse of time_slice over all t: T tensors [N, E] → [N·T, E].
Var interleave_time(const std::vector<Var>& parts);

// Convolution over [N, C, S0, S1, S2] tensors.
struct ConvGeometry {
  std::array<std::size_t, 3> kernel{};
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> pad_lo{};
};

/// Output spatial size of a convolution over `in`.
std::array<std::size_t, 3> conv_output_size(const std::array<std::size_t, 3>& in, const ConvGeometry& g,
                                            const std::array<std::size_t, 3>& pad_hi);

/// w [C_out, C_in, k0, k1, k2]; `out` is the output spatial size.
Var conv3d(Var x, Var w, const ConvGeometry& g, const std::array<std::size_t, 3>& out);
/// Adjoint of conv3d. w [C_in, C_out, k0, k1, k2] (input channels first);
/// `out` is the spatial size of the result.
Var conv3d_transpose(Var x, Var w, const ConvGeometry& g, const std::array<std::size_t, 3>& out);
/// x [N, C, ...] + b[C] broadcast over the trailing axes.
Var channel_bias(Var x, Var b);

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  ///< biased (population) variance
  std::size_t count = 0;    ///< elements per channel
};

/// Normalises with batch statistics; `stats` receives the batch moments.
Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats);
/// Normalises with fixed running statistics.
Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var, double eps);

// Graph layers over node features laid out as [B·M, F] (sample-major).
/// Picks `cells` columns of an [B, C] tensor → [B·M, 1].
Var gather_nodes(Var x, const std::vector<std::size_t>& cells);
/// Symmetric-normalised propagation D^-1/2 A D^-1/2 X for block-diagonal
/// all-ones A (one block per RBX, self-loops included): every node receives
/// the mean over its block.
Var block_mean(Var x, std::size_t M, const std::vector<std::vector<std::size_t>>& blocks);
/// Mean over the M nodes of each sample: [B·M, F] → [B, F].
Var mean_nodes(Var x, std::size_t M);

// Loss terms (scalar outputs).
/// Σ mask·(pred − target)² / (rows · Σ mask), pred and target [rows, cells].
Var masked_mse(Var pred, const Tensor& target, const std::vector<double>& mask);
/// mean over rows of −½ Σ (1 + logvar − μ² − exp(logvar)).
Var gaussian_kl(Var mu, Var logvar);
/// Σ over all elements of all tensors of v².
Var sum_squares(const std::vector<Var>& vars);

/// Throws NumericFault naming `layer` if any value is NaN or infinite.
void check_finite(Var v, const std::string& layer);

}  // namespace graphstad::ad
