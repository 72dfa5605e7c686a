// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "owq/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "owq/gemm.hpp"
#include "owq/hessian.hpp"
#include "owq/optq.hpp"
#include "owq/quantgrid.hpp"

namespace owq {
namespace {

MatrixF relu(const MatrixF& m) { return m.cwiseMax(0.0f); }

/// Single-head causal attention: column b attends to columns a <= b.
MatrixF attention(const MatrixF& q, const MatrixF& k, const MatrixF& v) {
  const Index n = q.cols();
  const float scale = 1.0f / std::sqrt(static_cast<float>(q.rows()));
  const MatrixF scores = (k.transpose() * q) * scale;  // scores(a, b) = k_a . q_b
  MatrixF probs = MatrixF::Zero(n, n);
  for (Index b = 0; b < n; ++b) {
    const float mx = scores.col(b).head(b + 1).maxCoeff();
    float sum = 0.0f;
    for (Index a = 0; a <= b; ++a) {
      probs(a, b) = std::exp(scores(a, b) - mx);
      sum += probs(a, b);
    }
    probs.col(b).head(b + 1) /= sum;
  }
  return v * probs;
}

/// Applies layer `index` to its input.
using LinearFn = std::function<MatrixF(std::size_t index, const MatrixF& input)>;

/// Runs the stack; `observe` sees each layer's input before it is applied.
MatrixF run_stack(const LayerStack& stack, const MatrixF& x, const LinearFn& apply,
                  const std::function<void(std::size_t, const MatrixF&)>& observe = {}) {
  auto call = [&](std::size_t l, const MatrixF& in) {
    if (observe) observe(l, in);
    return apply(l, in);
  };
  MatrixF h = x;
  if (stack.topology == Topology::mlp) {
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
      h = call(l, h);
      if (l + 1 < stack.layers.size()) h = relu(h);
    }
    return h;
  }
  for (std::size_t b = 0; b < stack.layers.size(); b += 6) {
    const MatrixF k = call(b + 0, h);
    const MatrixF q = call(b + 1, h);
    const MatrixF v = call(b + 2, h);
    const MatrixF attn = attention(q, k, v);
    const MatrixF mid = h + call(b + 3, attn);
    const MatrixF act = relu(call(b + 4, mid));
    h = mid + call(b + 5, act);
  }
  return h;
}

LinearFn dense_apply(const std::vector<MatrixF>& weights) {
  return [&weights](std::size_t l, const MatrixF& in) { return MatrixF(weights[l] * in); };
}

std::vector<MatrixF> stack_weights(const LayerStack& stack) {
  std::vector<MatrixF> w;
  for (const auto& l : stack.layers) w.push_back(l.weight);
  return w;
}

double sq_error(const MatrixF& a, const MatrixF& b) { return (a - b).cast<double>().squaredNorm(); }

struct LayerOutcome {
  QuantizedLayer layer;
  MatrixF w_hat;
  SensitivityReport<float> sensitivity;
  LayerReport report;
};

OptqOptions<float> engine_options(const QuantConfig& cfg, std::vector<Index> skip) {
  OptqOptions<float> o;
  o.bits = cfg.bits;
  o.block_size = cfg.block_size;
  o.act_order = cfg.act_order;
  o.group_size = cfg.group_size;
  o.grid = GridOptions{cfg.clip_search, cfg.grid_points, cfg.maxshrink};
  o.skip_columns = std::move(skip);
  o.compensate_weak = cfg.compensate_weak;
  return o;
}

LayerOutcome quantize_linear(const StackLayer& sl, const MatrixF& input, Index k, const QuantConfig& cfg) {
  const MatrixF& w = sl.weight;
  check_index_width(w.cols());
  HessianState<float> hs(w.cols());
  accumulate(hs, input);

  LayerOutcome out;
  const GridOptions grid{cfg.clip_search, cfg.grid_points, cfg.maxshrink};
  out.sensitivity = column_sensitivities(w, hs, cfg.bits, grid);
  if (cfg.method == Method::owq) out.sensitivity.selected = select_weak_columns(out.sensitivity, k);

  const auto opts = engine_options(cfg, out.sensitivity.selected);
  OptqResult<float> result;
  if (cfg.method == Method::rtn) {
    result = rtn_layer(w, opts);
  } else {
    dampen(hs, static_cast<float>(cfg.percdamp));
    result = quantize_layer(w, hs, opts);
  }
  out.layer = assemble_layer(result, out.sensitivity.selected, cfg.accounting_mode);
  out.w_hat = dequantize_layer(out.layer);

  auto& r = out.report;
  r.name = sl.name;
  r.c_out = w.rows();
  r.c_in = w.cols();
  r.k = out.layer.k();
  r.effective_bits = effective_bits({r.c_out, r.c_in}, cfg.bits, r.k, cfg.accounting_mode);
  r.bytes = out.layer.serialized_bytes();
  r.sensitivity_max = out.sensitivity.sensitivity.maxCoeff();
  r.sensitivity_mean = out.sensitivity.sensitivity.mean();
  r.selected = out.sensitivity.selected;
  const MatrixF y_ref = w * input;
  r.error_quantized = sq_error(y_ref, out.w_hat * input);
  const auto rtn = rtn_layer(w, engine_options(cfg, out.sensitivity.selected));
  r.error_rtn = sq_error(y_ref, MatrixF(rtn.dequantized()) * input);
  return out;
}

Index parse_index(const std::string& s) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size() || v < 0) throw Error("bad layer index");
    return static_cast<Index>(v);
  } catch (const std::logic_error&) {
    throw Error("bad layer index '" + s + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

std::string_view to_string(Method m) {
  switch (m) {
    case Method::owq: return "owq";
    case Method::optq: return "optq";
    case Method::rtn: return "rtn";
  }
  return "?";
}

Method method_from_string(std::string_view s) {
  if (s == "owq") return Method::owq;
  if (s == "optq") return Method::optq;
  if (s == "rtn") return Method::rtn;
  throw Error("unknown method '" + std::string(s) + "'");
}

void QuantConfig::validate() const {
  check_bits(bits);
  if (!(extra_bits >= 0.0)) throw Error("extra_bits must be >= 0");
  if (group_size < 0) throw Error("group_size must be >= 0");
  if (!(percdamp > 0.0)) throw Error("percdamp must be positive");
  if (block_size <= 0) throw Error("block_size must be positive");
  if (grid_points < 2) throw Error("grid_points must be >= 2");
  if (!(maxshrink > 0.0 && maxshrink < 1.0)) throw Error("maxshrink must be in (0, 1)");
  if (!(calib_fraction > 0.0 && calib_fraction < 1.0)) throw Error("calib_fraction must be in (0, 1)");
}

nlohmann::json to_json(const QuantConfig& c) {
  return {{"method", to_string(c.method)},
          {"bits", c.bits},
          {"extra_bits", c.extra_bits},
          {"mode", to_string(c.accounting_mode)},
          {"act_order", c.act_order},
          {"true_sequential", c.true_sequential},
          {"group_size", c.group_size},
          {"clip_search", c.clip_search},
          {"grid_points", c.grid_points},
          {"maxshrink", c.maxshrink},
          {"compensate_weak", c.compensate_weak},
          {"percdamp", c.percdamp},
          {"block_size", c.block_size},
          {"seed", c.seed},
          {"calib_fraction", c.calib_fraction},
          {"per_layer_budget_weights", c.per_layer_budget_weights}};
}

void apply_json(QuantConfig& c, const nlohmann::json& j) {
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "method") c.method = method_from_string(v.get<std::string>());
      else if (key == "bits") c.bits = v.get<int>();
      else if (key == "extra_bits") c.extra_bits = v.get<double>();
      else if (key == "mode") c.accounting_mode = accounting_mode_from_string(v.get<std::string>());
      else if (key == "act_order") c.act_order = v.get<bool>();
      else if (key == "true_sequential") c.true_sequential = v.get<bool>();
      else if (key == "group_size") c.group_size = v.get<Index>();
      else if (key == "clip_search") c.clip_search = v.get<bool>();
      else if (key == "grid_points") c.grid_points = v.get<int>();
      else if (key == "maxshrink") c.maxshrink = v.get<double>();
      else if (key == "compensate_weak") c.compensate_weak = v.get<bool>();
      else if (key == "percdamp") c.percdamp = v.get<double>();
      else if (key == "block_size") c.block_size = v.get<Index>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "calib_fraction") c.calib_fraction = v.get<double>();
      else if (key == "per_layer_budget_weights") c.per_layer_budget_weights = v.get<std::vector<double>>();
      else throw Error("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("bad config value: ") + ex.what());
  }
}

// ---------------------------------------------------------------------------
// LayerStack

LayerStack LayerStack::mlp(const std::vector<MatrixF>& weights) {
  LayerStack s;
  s.topology = Topology::mlp;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    s.layers.push_back({"layer." + std::to_string(i) + ".linear", "linear", weights[i]});
  }
  s.validate();
  return s;
}

LayerStack LayerStack::transformer(const std::vector<std::vector<MatrixF>>& blocks) {
  LayerStack s;
  s.topology = Topology::transformer;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].size() != 6) throw Error("transformer block needs six weights");
    for (std::size_t r = 0; r < 6; ++r) {
      s.layers.push_back({"layer." + std::to_string(b) + "." + kBlockRoles[r], kBlockRoles[r], blocks[b][r]});
    }
  }
  s.validate();
  return s;
}

LayerStack LayerStack::from_archive(const TensorArchive& archive) {
  // layer.<i>.<name>.weight
  std::map<Index, std::map<std::string, MatrixF>> found;
  for (const auto& [name, entry] : archive.entries()) {
    if (!name.starts_with("layer.") || !name.ends_with(".weight")) continue;
    const std::string mid = name.substr(6, name.size() - 6 - 7);
    const auto dot = mid.find('.');
    if (dot == std::string::npos) throw Error("bad layer entry name '" + name + "'");
    const Tensor t = archive.tensor(name);
    if (t.shape.size() != 2) throw Error("layer weight '" + name + "' must be 2-D");
    found[parse_index(mid.substr(0, dot))][mid.substr(dot + 1)] = t.to_matrix();
  }
  if (found.empty()) throw Error("archive contains no layer.<i>.<name>.weight entries");
  Index expect = 0;
  for (const auto& [i, _] : found) {
    if (i != expect++) throw Error("layer indices must be contiguous from 0");
  }

  const bool is_transformer = found.begin()->second.count("k") > 0;
  if (is_transformer) {
    std::vector<std::vector<MatrixF>> blocks;
    for (auto& [i, named] : found) {
      std::vector<MatrixF> ws;
      for (const char* role : kBlockRoles) {
        auto it = named.find(role);
        if (it == named.end()) throw Error("block " + std::to_string(i) + " is missing layer '" + role + "'");
        ws.push_back(it->second);
      }
      if (named.size() != 6) throw Error("block " + std::to_string(i) + " has unexpected layers");
      blocks.push_back(std::move(ws));
    }
    return transformer(blocks);
  }
  std::vector<MatrixF> ws;
  for (auto& [i, named] : found) {
    if (named.size() != 1) throw Error("mlp layer " + std::to_string(i) + " must have exactly one weight");
    ws.push_back(named.begin()->second);
  }
  auto s = mlp(ws);
  // keep the archive's own layer names
  std::size_t l = 0;
  for (auto& [i, named] : found) {
    s.layers[l].name = "layer." + std::to_string(i) + "." + named.begin()->first;
    ++l;
  }
  return s;
}

TensorArchive LayerStack::to_archive() const {
  TensorArchive a;
  for (const auto& l : layers) a.add_f32(l.name + ".weight", l.weight);
  a.set_meta("topology", topology == Topology::mlp ? "mlp" : "transformer");
  return a;
}

void LayerStack::validate() const {
  if (layers.empty()) throw Error("layer stack is empty");
  for (const auto& l : layers) {
    if (l.weight.size() == 0) throw Error("layer '" + l.name + "' has an empty weight");
  }
  if (topology == Topology::mlp) {
    for (std::size_t i = 1; i < layers.size(); ++i) {
      if (layers[i].weight.cols() != layers[i - 1].weight.rows()) {
        throw Error("layer '" + layers[i].name + "' does not compose with its predecessor");
      }
    }
    return;
  }
  if (layers.size() % 6 != 0) throw Error("transformer stack must hold whole blocks");
  const Index d = layers[0].weight.cols();
  for (std::size_t b = 0; b < layers.size(); b += 6) {
    const auto& k = layers[b].weight;
    const auto& q = layers[b + 1].weight;
    const auto& v = layers[b + 2].weight;
    const auto& o = layers[b + 3].weight;
    const auto& f1 = layers[b + 4].weight;
    const auto& f2 = layers[b + 5].weight;
    const bool ok = k.cols() == d && q.cols() == d && v.cols() == d && k.rows() == q.rows() &&
                    o.cols() == v.rows() && o.rows() == d && f1.cols() == d && f2.cols() == f1.rows() &&
                    f2.rows() == d;
    if (!ok) throw Error("transformer block " + std::to_string(b / 6) + " has inconsistent shapes");
  }
}

Index LayerStack::input_width() const { return layers.front().weight.cols(); }

std::vector<std::vector<std::size_t>> LayerStack::budget_groups() const {
  std::vector<std::vector<std::size_t>> groups;
  const std::size_t width = topology == Topology::mlp ? layers.size() : 6;
  for (std::size_t b = 0; b < layers.size(); b += width) {
    std::vector<std::size_t> g;
    for (std::size_t l = b; l < b + width; ++l) g.push_back(l);
    groups.push_back(std::move(g));
  }
  return groups;
}

// ---------------------------------------------------------------------------
// Forward / quantize / evaluate

MatrixF forward(const LayerStack& stack, const MatrixF& x) {
  const auto w = stack_weights(stack);
  return run_stack(stack, x, dense_apply(w));
}

MatrixF forward_with(const LayerStack& stack, const std::vector<MatrixF>& weights, const MatrixF& x) {
  if (weights.size() != stack.layers.size()) throw Error("forward_with: weight count mismatch");
  return run_stack(stack, x, dense_apply(weights));
}

std::pair<MatrixF, MatrixF> split_samples(const MatrixF& data, double fraction) {
  const auto n_calib = static_cast<Index>(std::floor(static_cast<double>(data.cols()) * fraction));
  if (n_calib <= 0 || n_calib >= data.cols()) throw Error("split leaves an empty calibration or evaluation set");
  return {data.leftCols(n_calib), data.rightCols(data.cols() - n_calib)};
}

QuantizedModel quantize_model(const LayerStack& stack, const MatrixF& calib, const QuantConfig& cfg) {
  cfg.validate();
  stack.validate();
  if (calib.rows() != stack.input_width()) throw Error("calibration rows do not match the model input width");
  for (const auto& l : stack.layers) check_index_width(l.weight.cols());

  // Weak-column counts per layer.
  std::vector<Index> k_of(stack.layers.size(), 0);
  if (cfg.method == Method::owq) {
    for (const auto& group : stack.budget_groups()) {
      std::vector<LayerDims> dims;
      for (std::size_t l : group) dims.push_back({stack.layers[l].weight.rows(), stack.layers[l].weight.cols()});
      const auto plan = budget_to_k(cfg.extra_bits, dims, cfg.bits, cfg.accounting_mode, cfg.per_layer_budget_weights);
      for (std::size_t i = 0; i < group.size(); ++i) k_of[group[i]] = plan.k_per_layer[i];
    }
  }

  QuantizedModel model;
  std::vector<MatrixF> w_hat = stack_weights(stack);
  std::vector<LayerOutcome> outcomes(stack.layers.size());
  auto quantize_at = [&](std::size_t l, const MatrixF& input) {
    outcomes[l] = quantize_linear(stack.layers[l], input, k_of[l], cfg);
    w_hat[l] = outcomes[l].w_hat;
  };

  MatrixF x = calib;
  if (stack.topology == Topology::mlp) {
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
      quantize_at(l, x);
      x = w_hat[l] * x;
      if (l + 1 < stack.layers.size()) x = relu(x);
    }
  } else {
    for (std::size_t b = 0; b < stack.layers.size(); b += 6) {
      if (cfg.true_sequential) {
        // {k, q, v} share x; out, fc1 and fc2 each see the quantized prefix.
        for (std::size_t r = 0; r < 3; ++r) quantize_at(b + r, x);
        const MatrixF attn = attention(w_hat[b + 1] * x, w_hat[b] * x, w_hat[b + 2] * x);
        quantize_at(b + 3, attn);
        const MatrixF mid = x + w_hat[b + 3] * attn;
        quantize_at(b + 4, mid);
        const MatrixF act = relu(w_hat[b + 4] * mid);
        quantize_at(b + 5, act);
        x = mid + w_hat[b + 5] * act;
      } else {
        // Every layer of the block sees full-precision activations of the block input.
        const auto& W = stack.layers;
        const MatrixF attn = attention(W[b + 1].weight * x, W[b].weight * x, W[b + 2].weight * x);
        const MatrixF mid = x + W[b + 3].weight * attn;
        const MatrixF act = relu(W[b + 4].weight * mid);
        for (std::size_t r = 0; r < 3; ++r) quantize_at(b + r, x);
        quantize_at(b + 3, attn);
        quantize_at(b + 4, mid);
        quantize_at(b + 5, act);
        const MatrixF attn_q = attention(w_hat[b + 1] * x, w_hat[b] * x, w_hat[b + 2] * x);
        const MatrixF mid_q = x + w_hat[b + 3] * attn_q;
        x = mid_q + w_hat[b + 5] * relu(w_hat[b + 4] * mid_q);
      }
    }
  }

  auto& rep = model.report;
  rep.method = std::string(to_string(cfg.method));
  rep.true_sequential = cfg.true_sequential;
  rep.accounting_mode = std::string(to_string(cfg.accounting_mode));
  rep.calib_samples = calib.cols();
  std::vector<LayerDims> all_dims;
  std::vector<Index> all_k;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    auto& o = outcomes[l];
    write_layer(model.archive, stack.layers[l].name, o.layer);
    write_sensitivity(model.archive, stack.layers[l].name, o.sensitivity);
    rep.total_bytes += o.report.bytes;
    if (cfg.method == Method::owq && cfg.extra_bits > 0.0 && o.report.k == 0) rep.zero_k_layers.push_back(o.report.name);
    all_dims.push_back({o.report.c_out, o.report.c_in});
    all_k.push_back(o.report.k);
    rep.layers.push_back(o.report);
    model.layers.push_back(std::move(o.layer));
  }
  rep.average_bits = average_effective_bits(all_dims, cfg.bits, all_k, cfg.accounting_mode);
  const MatrixF y_ref = forward(stack, calib);
  rep.end_to_end_error = sq_error(y_ref, x);
  const double ref = y_ref.cast<double>().squaredNorm();
  rep.relative_error = ref > 0.0 ? rep.end_to_end_error / ref : 0.0;

  model.archive.set_meta("topology", stack.topology == Topology::mlp ? "mlp" : "transformer");
  model.archive.set_meta("config", to_json(cfg).dump());
  return model;
}

QuantReport evaluate(const LayerStack& stack, const TensorArchive& quantized, const MatrixF& eval_x) {
  stack.validate();
  if (eval_x.rows() != stack.input_width()) throw Error("evaluation rows do not match the model input width");

  struct Replacement {
    bool packed = false;
    QuantizedLayer layer;
    MatrixF dense;
  };
  std::vector<Replacement> repl(stack.layers.size());
  QuantReport rep;
  AccountingMode mode = AccountingMode::latency_favored;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const auto& sl = stack.layers[l];
    LayerReport lr;
    lr.name = sl.name;
    lr.c_out = sl.weight.rows();
    lr.c_in = sl.weight.cols();
    if (has_layer(quantized, sl.name)) {
      repl[l].packed = true;
      repl[l].layer = read_layer(quantized, sl.name);
      const auto& q = repl[l].layer;
      if (q.c_out != lr.c_out || q.c_in != lr.c_in) throw Error("quantized layer '" + sl.name + "' has the wrong shape");
      lr.k = q.k();
      lr.effective_bits = effective_bits({q.c_out, q.c_in}, q.bits, q.k(), q.mode);
      lr.bytes = q.serialized_bytes();
      lr.selected.assign(q.weak_indices.begin(), q.weak_indices.end());
      mode = q.mode;
    } else if (quantized.contains(sl.name + ".weight")) {
      repl[l].dense = quantized.tensor(sl.name + ".weight").to_matrix();
      if (repl[l].dense.rows() != lr.c_out || repl[l].dense.cols() != lr.c_in) {
        throw Error("layer '" + sl.name + "' has the wrong shape");
      }
      lr.effective_bits = 32.0;
      lr.bytes = static_cast<std::size_t>(repl[l].dense.size()) * 4;
    } else {
      throw Error("archive is missing layer '" + sl.name + "'");
    }
    rep.total_bytes += lr.bytes;
    rep.layers.push_back(lr);
  }

  double num_bits = 0.0;
  double num_weights = 0.0;
  for (const auto& lr : rep.layers) {
    num_bits += lr.effective_bits * static_cast<double>(lr.c_out * lr.c_in);
    num_weights += static_cast<double>(lr.c_out * lr.c_in);
  }
  rep.average_bits = num_bits / num_weights;
  rep.accounting_mode = std::string(to_string(mode));
  if (auto cfg = quantized.meta("config")) {
    rep.method = nlohmann::json::parse(*cfg).value("method", "");
  } else {
    rep.method = "dense";
  }

  const MatrixF y = run_stack(
      stack, eval_x,
      [&](std::size_t l, const MatrixF& in) {
        return repl[l].packed ? mixed_forward(repl[l].layer, in) : MatrixF(repl[l].dense * in);
      },
      [&](std::size_t l, const MatrixF& in) {
        const auto& w = stack.layers[l].weight;
        rep.layers[l].error_quantized = repl[l].packed ? layer_output_error(w, repl[l].layer, in)
                                                       : sq_error(w * in, repl[l].dense * in);
      });
  const MatrixF y_ref = forward(stack, eval_x);
  rep.end_to_end_error = sq_error(y_ref, y);
  const double ref = y_ref.cast<double>().squaredNorm();
  rep.relative_error = ref > 0.0 ? rep.end_to_end_error / ref : 0.0;
  rep.eval_samples = eval_x.cols();
  return rep;
}

nlohmann::json QuantReport::to_json() const {
  nlohmann::json layers_json = nlohmann::json::array();
  for (const auto& l : layers) {
    layers_json.push_back({{"name", l.name},
                           {"c_out", l.c_out},
                           {"c_in", l.c_in},
                           {"k", l.k},
                           {"effective_bits", l.effective_bits},
                           {"bytes", l.bytes},
                           {"sensitivity_max", l.sensitivity_max},
                           {"sensitivity_mean", l.sensitivity_mean},
                           {"selected", l.selected},
                           {"error_rtn", l.error_rtn},
                           {"error_quantized", l.error_quantized}});
  }
  return {{"method", method},
          {"true_sequential", true_sequential},
          {"mode", accounting_mode},
          {"layers", layers_json},
          {"totals",
           {{"average_bits", average_bits},
            {"total_bytes", total_bytes},
            {"end_to_end_error", end_to_end_error},
            {"relative_error", relative_error}}},
          {"calib_samples", calib_samples},
          {"eval_samples", eval_samples},
          {"zero_k_layers", zero_k_layers}};
}

// ---------------------------------------------------------------------------
// Sweep

std::vector<SweepRow> sweep(const LayerStack& stack, const MatrixF& calib, const MatrixF& eval_x,
                            const QuantConfig& base, const std::vector<double>& extra_bit_list, int jobs) {
  if (extra_bit_list.empty()) throw Error("sweep needs at least one budget");
  std::vector<SweepRow> rows(extra_bit_list.size());
  auto run_one = [&](std::size_t i) {
    QuantConfig cfg = base;
    cfg.extra_bits = extra_bit_list[i];
    const auto model = quantize_model(stack, calib, cfg);
    const auto rep = evaluate(stack, model.archive, eval_x);
    rows[i] = {cfg.extra_bits, model.report.average_bits, rep.end_to_end_error, model.report.total_bytes};
  };
  if (jobs <= 1) {
    for (std::size_t i = 0; i < rows.size(); ++i) run_one(i);
    return rows;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> workers;
  for (int t = 0; t < std::min<int>(jobs, static_cast<int>(rows.size())); ++t) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < rows.size(); i = next++) {
        try {
          run_one(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out.precision(9);
  out << "effective_bits,end_to_end_error,total_bytes\n";
  for (const auto& r : rows) out << r.effective_bits << ',' << r.end_to_end_error << ',' << r.total_bytes << '\n';
  return out.str();
}

}  // namespace owq
