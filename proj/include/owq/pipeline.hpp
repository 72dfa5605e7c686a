// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OWQ_PIPELINE_HPP_
#define OWQ_PIPELINE_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "owq/archive.hpp"
#include "owq/core.hpp"
#include "owq/packed.hpp"
#include "owq/selector.hpp"

namespace owq {

enum class Method {
  owq,   // weak columns in fp16 + error-compensated low-bit remainder
  optq,  // error compensation only, no weak columns
  rtn,   // per-row round-to-nearest
};

std::string_view to_string(Method m);
Method method_from_string(std::string_view s);

struct QuantConfig {
  Method method = Method::owq;
  int bits = 3;
  double extra_bits = 0.0;
  AccountingMode accounting_mode = AccountingMode::latency_favored;
  bool act_order = false;
  bool true_sequential = false;
  Index group_size = 0;
  bool clip_search = true;
  int grid_points = 100;
  double maxshrink = 0.2;
  bool compensate_weak = true;
  double percdamp = 0.01;
  Index block_size = 128;
  std::uint64_t seed = 0;
  double calib_fraction = 0.8;
  std::vector<double> per_layer_budget_weights;

  void validate() const;
};

nlohmann::json to_json(const QuantConfig& cfg);
/// Overlays the keys present in j onto cfg.
void apply_json(QuantConfig& cfg, const nlohmann::json& j);

enum class Topology { mlp, transformer };

/// Roles within a transformer block, in quantization order.
inline constexpr const char* kBlockRoles[6] = {"k", "q", "v", "out", "fc1", "fc2"};

struct StackLayer {
  std::string name;  // archive prefix, e.g. "layer.0.fc1"
  std::string role;  // "linear" or one of kBlockRoles
  MatrixF weight;
};

/// Either a plain MLP (ReLU between layers, none after the last) or a stack
/// of toy transformer blocks: single-head causal attention over the sample
/// columns with residual connections, then a ReLU MLP with a residual. Only
/// the six linear layers of a block are quantized.
struct LayerStack {
  Topology topology = Topology::mlp;
  std::vector<StackLayer> layers;

  static LayerStack mlp(const std::vector<MatrixF>& weights);
  /// Each block is {k, q, v, out, fc1, fc2}.
  static LayerStack transformer(const std::vector<std::vector<MatrixF>>& blocks);

  static LayerStack from_archive(const TensorArchive& archive);
  TensorArchive to_archive() const;

  void validate() const;
  Index input_width() const;
  /// Groups of layer indices that share one extra-bit budget.
  std::vector<std::vector<std::size_t>> budget_groups() const;
};

struct LayerReport {
  std::string name;
  Index c_out = 0;
  Index c_in = 0;
  Index k = 0;
  double effective_bits = 0.0;
  std::size_t bytes = 0;
  double sensitivity_max = 0.0;
  double sensitivity_mean = 0.0;
  std::vector<Index> selected;
  double error_rtn = 0.0;        // RTN at the same grid settings, same inputs
  double error_quantized = 0.0;  // ||W x - W_hat x||^2 on the layer's inputs
};

struct QuantReport {
  std::string method;
  bool true_sequential = false;
  std::string accounting_mode;
  std::vector<LayerReport> layers;
  double average_bits = 0.0;
  std::size_t total_bytes = 0;
  double end_to_end_error = 0.0;
  double relative_error = 0.0;
  std::int64_t calib_samples = 0;
  std::int64_t eval_samples = 0;
  std::vector<std::string> zero_k_layers;  // budget too small for one column

  nlohmann::json to_json() const;
};

struct QuantizedModel {
  TensorArchive archive;
  std::vector<QuantizedLayer> layers;
  QuantReport report;
};

/// Full-precision forward of the stack.
MatrixF forward(const LayerStack& stack, const MatrixF& x);
/// Forward with replacement weights (same order as stack.layers).
MatrixF forward_with(const LayerStack& stack, const std::vector<MatrixF>& weights, const MatrixF& x);

/// Sequential layer-wise quantization; Hessians come from the activations
/// produced by the already-quantized upstream part of the model.
QuantizedModel quantize_model(const LayerStack& stack, const MatrixF& calib, const QuantConfig& cfg);

/// Errors of a quantized (or dense f32) archive against the full-precision stack.
QuantReport evaluate(const LayerStack& stack, const TensorArchive& quantized, const MatrixF& eval_x);

/// First `fraction` of the sample columns for calibration, the rest for evaluation.
std::pair<MatrixF, MatrixF> split_samples(const MatrixF& data, double fraction);

struct SweepRow {
  double extra_bits = 0.0;
  double effective_bits = 0.0;
  double end_to_end_error = 0.0;
  std::size_t total_bytes = 0;
};

/// One quantize + evaluate per budget; jobs > 1 runs budgets in parallel.
std::vector<SweepRow> sweep(const LayerStack& stack, const MatrixF& calib, const MatrixF& eval_x,
                            const QuantConfig& base, const std::vector<double>& extra_bit_list, int jobs = 1);

/// CSV with header effective_bits,end_to_end_error,total_bytes.
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace owq

#endif  // OWQ_PIPELINE_HPP_
