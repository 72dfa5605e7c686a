// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "owq/selector.hpp"

#include <cmath>
#include <string>

namespace owq {

std::string_view to_string(AccountingMode m) {
  return m == AccountingMode::latency_favored ? "latency" : "storage";
}

AccountingMode accounting_mode_from_string(std::string_view s) {
  if (s == "latency" || s == "latency_favored") return AccountingMode::latency_favored;
  if (s == "storage" || s == "storage_favored") return AccountingMode::storage_favored;
  throw Error("unknown accounting mode '" + std::string(s) + "'");
}

double weak_column_cost_bits(const LayerDims& dims, int bits, AccountingMode mode) {
  const double rows = static_cast<double>(dims.c_out);
  // fp16 column plus one u16 index; storage-favored also frees the column's low-bit codes.
  return mode == AccountingMode::latency_favored ? 16.0 * rows + 16.0 : (16.0 - bits) * rows + 16.0;
}

BudgetPlan budget_to_k(double extra_bits, std::span<const LayerDims> layer_dims, int bits, AccountingMode mode,
                       std::span<const double> layer_weights) {
  if (!(extra_bits >= 0.0)) throw Error("negative extra-bit budget");
  check_bits(bits);
  if (!layer_weights.empty() && layer_weights.size() != layer_dims.size()) {
    throw Error("per-layer budget weights must match the number of layers");
  }
  BudgetPlan plan;
  plan.extra_bits = extra_bits;
  plan.bits = bits;
  plan.accounting_mode = mode;
  plan.layer_dims.assign(layer_dims.begin(), layer_dims.end());

  double total_weights = 0.0;
  for (const auto& d : layer_dims) total_weights += d.numel();
  plan.total_budget_bits = extra_bits * total_weights;

  double weight_sum = 0.0;
  for (double w : layer_weights) {
    if (!(w >= 0.0)) throw Error("per-layer budget weights must be non-negative");
    weight_sum += w;
  }
  if (!layer_weights.empty() && weight_sum <= 0.0) throw Error("per-layer budget weights sum to zero");

  const auto n_layers = static_cast<double>(layer_dims.size());
  for (std::size_t l = 0; l < layer_dims.size(); ++l) {
    const double share = layer_weights.empty() ? 1.0 / n_layers : layer_weights[l] / weight_sum;
    const double budget = plan.total_budget_bits * share;
    const double k = std::floor(budget / weak_column_cost_bits(layer_dims[l], bits, mode));
    plan.budget_bits_per_layer.push_back(budget);
    plan.k_per_layer.push_back(std::min<Index>(static_cast<Index>(k), layer_dims[l].c_in));
  }
  return plan;
}

double BudgetPlan::spent_bits() const {
  double spent = 0.0;
  for (std::size_t l = 0; l < layer_dims.size(); ++l) {
    spent += static_cast<double>(k_per_layer[l]) * weak_column_cost_bits(layer_dims[l], bits, accounting_mode);
  }
  return spent;
}

double BudgetPlan::average_bits() const {
  return average_effective_bits(layer_dims, bits, k_per_layer, accounting_mode);
}

namespace {

double stored_bits(const LayerDims& dims, int bits, Index k, AccountingMode mode) {
  if (k < 0 || k > dims.c_in) throw Error("effective_bits: k out of range");
  const double rows = static_cast<double>(dims.c_out);
  const double kk = static_cast<double>(k);
  double total = bits * rows * static_cast<double>(dims.c_in - k) + 16.0 * rows * kk + 16.0 * kk;
  if (mode == AccountingMode::latency_favored) total += bits * rows * kk;
  return total;
}

}  // namespace

double effective_bits(const LayerDims& dims, int bits, Index k, AccountingMode mode) {
  return stored_bits(dims, bits, k, mode) / dims.numel();
}

double average_effective_bits(std::span<const LayerDims> dims, int bits, std::span<const Index> k,
                              AccountingMode mode) {
  if (dims.size() != k.size()) throw Error("average_effective_bits: size mismatch");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t l = 0; l < dims.size(); ++l) {
    num += stored_bits(dims[l], bits, k[l], mode);
    den += dims[l].numel();
  }
  return den > 0.0 ? num / den : static_cast<double>(bits);
}

}  // namespace owq
