// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "owq/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "owq/archive.hpp"
#include "owq/gemm.hpp"
#include "owq/packed.hpp"
#include "owq/pipeline.hpp"
#include "owq/selector.hpp"
#include "owq/synthetic.hpp"

namespace owq::cli {
namespace {

namespace fs = std::filesystem;

constexpr const char* kCalibEntry = "calib.x";

/// Flags that mirror QuantConfig; only explicitly given flags override the config file.
struct ConfigFlags {
  std::string config_path;
  std::string method = "owq";
  int bits = 3;
  double extra_bits = 0.0;
  std::string mode = "latency";
  Index group_size = 0;
  bool act_order = false;
  bool true_sequential = false;
  bool no_clip_search = false;
  bool no_compensate_weak = false;
  double percdamp = 0.01;
  std::uint64_t seed = 0;
  Index block_size = 128;
  double calib_fraction = 0.8;
  std::vector<CLI::Option*> opts;

  void attach(CLI::App& app) {
    opts.push_back(app.add_option("--config", config_path, "JSON file with QuantConfig keys")->check(CLI::ExistingFile));
    opts.push_back(app.add_option("--method", method, "owq | optq | rtn")->check(CLI::IsMember({"owq", "optq", "rtn"})));
    opts.push_back(app.add_option("--bits", bits, "Low-bit width")->check(CLI::Range(kMinBits, kMaxBits)));
    opts.push_back(app.add_option("--extra-bits", extra_bits, "Extra bits per weight for weak columns")
                       ->check(CLI::NonNegativeNumber));
    opts.push_back(app.add_option("--mode", mode, "Accounting mode")->check(CLI::IsMember({"latency", "storage"})));
    opts.push_back(app.add_option("--group-size", group_size, "Columns per grid group (0 = per row)")
                       ->check(CLI::NonNegativeNumber));
    opts.push_back(app.add_flag("--act-order", act_order, "Quantize columns by descending Hessian diagonal"));
    opts.push_back(app.add_flag("--true-sequential", true_sequential, "Propagate quantized activations within blocks"));
    opts.push_back(app.add_flag("--no-clip-search", no_clip_search, "Use plain min-max grids"));
    opts.push_back(app.add_flag("--no-compensate-weak", no_compensate_weak, "Freeze weak columns at their original values"));
    opts.push_back(app.add_option("--percdamp", percdamp, "Hessian dampening fraction")->check(CLI::PositiveNumber));
    opts.push_back(app.add_option("--seed", seed, "Seed recorded in the report"));
    opts.push_back(app.add_option("--block-size", block_size, "Lazy update block width")->check(CLI::PositiveNumber));
    opts.push_back(app.add_option("--calib-fraction", calib_fraction, "Fraction of samples used for calibration")
                       ->check(CLI::Range(0.0, 1.0)));
  }

  bool given(const char* name) const {
    for (auto* o : opts) {
      if (o->check_name(name)) return o->count() > 0;
    }
    return false;
  }

  QuantConfig build() const {
    QuantConfig cfg;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& ex) {
        throw Error(std::string("cannot parse config file: ") + ex.what());
      }
      apply_json(cfg, j);
    }
    if (given("--method")) cfg.method = method_from_string(method);
    if (given("--bits")) cfg.bits = bits;
    if (given("--extra-bits")) cfg.extra_bits = extra_bits;
    if (given("--mode")) cfg.accounting_mode = accounting_mode_from_string(mode);
    if (given("--group-size")) cfg.group_size = group_size;
    if (act_order) cfg.act_order = true;
    if (true_sequential) cfg.true_sequential = true;
    if (no_clip_search) cfg.clip_search = false;
    if (no_compensate_weak) cfg.compensate_weak = false;
    if (given("--percdamp")) cfg.percdamp = percdamp;
    if (given("--seed")) cfg.seed = seed;
    if (given("--block-size")) cfg.block_size = block_size;
    if (given("--calib-fraction")) cfg.calib_fraction = calib_fraction;
    cfg.validate();
    return cfg;
  }
};

MatrixF load_samples(const std::string& path) {
  const auto a = load_archive(path);
  const auto t = a.tensor(kCalibEntry);
  if (t.shape.size() != 2) throw Error("calib.x must be a 2-D tensor (channels x samples)");
  return t.to_matrix();
}

std::string default_report_path(const std::string& out) {
  fs::path p(out);
  p.replace_extension(".report.json");
  return p.string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << text;
}

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? sep : "") + items[i];
  return s;
}

// ---------------------------------------------------------------------------

struct QuantizeArgs {
  std::string in, calib, out, report;
};

int cmd_quantize(const QuantizeArgs& a, const ConfigFlags& flags, std::ostream& out, std::ostream& err) {
  const QuantConfig cfg = flags.build();
  const auto stack = LayerStack::from_archive(load_archive(a.in));
  const auto [calib, eval_x] = split_samples(load_samples(a.calib), cfg.calib_fraction);
  const auto model = quantize_model(stack, calib, cfg);
  if (!model.report.zero_k_layers.empty()) {
    err << "warning: budget yields k=0 for layer(s) " << join(model.report.zero_k_layers, ", ")
        << " (few or no weak columns at this width)\n";
  }
  save_archive(model.archive, a.out);
  const auto held_out = evaluate(stack, model.archive, eval_x);

  nlohmann::json report = model.report.to_json();
  report["config"] = to_json(cfg);
  report["eval_samples"] = held_out.eval_samples;
  report["eval"] = {{"end_to_end_error", held_out.end_to_end_error},
                    {"relative_error", held_out.relative_error},
                    {"samples", held_out.eval_samples}};
  const std::string report_path = a.report.empty() ? default_report_path(a.out) : a.report;
  write_text(report_path, report.dump(2) + "\n");
  out << "wrote " << a.out << " (" << model.report.total_bytes << " bytes, " << std::setprecision(6)
      << model.report.average_bits << " bits/weight) and " << report_path << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string in, quantized, calib, report;
  bool all_samples = false;
  bool bench = false;
  double calib_fraction = 0.8;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto stack = LayerStack::from_archive(load_archive(a.in));
  const auto q = load_archive(a.quantized);
  const MatrixF data = load_samples(a.calib);
  const MatrixF eval_x = a.all_samples ? data : split_samples(data, a.calib_fraction).second;
  const auto rep = evaluate(stack, q, eval_x);
  out << std::setprecision(9);
  for (const auto& l : rep.layers) {
    out << l.name << ": k=" << l.k << " bits=" << l.effective_bits << " error=" << l.error_quantized << "\n";
  }
  out << "end_to_end_error=" << rep.end_to_end_error << " relative_error=" << rep.relative_error
      << " total_bytes=" << rep.total_bytes << "\n";
  nlohmann::json j = rep.to_json();

  if (a.bench) {
    // Informational only: wall-clock of the mixed kernel vs dequantize + dense product.
    nlohmann::json timings = nlohmann::json::array();
    for (const auto& sl : stack.layers) {
      if (!has_layer(q, sl.name)) continue;
      const auto layer = read_layer(q, sl.name);
      const MatrixF x = MatrixF::Random(layer.c_in, 64);
      using clock = std::chrono::steady_clock;
      const auto t0 = clock::now();
      const MatrixF y_mixed = mixed_forward(layer, x);
      const auto t1 = clock::now();
      const MatrixF y_dense = dequantize_layer(layer) * x;
      const auto t2 = clock::now();
      const double mixed_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      const double dense_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
      out << "bench " << sl.name << ": mixed " << mixed_ms << " ms, dense " << dense_ms << " ms\n";
      timings.push_back({{"name", sl.name}, {"mixed_ms", mixed_ms}, {"dense_ms", dense_ms}});
    }
    j["bench"] = timings;
  }
  if (!a.report.empty()) write_text(a.report, j.dump(2) + "\n");
  return kExitOk;
}

struct SweepArgs {
  std::string in, calib, out;
  std::vector<double> budgets;
  int jobs = 1;
};

int cmd_sweep(const SweepArgs& a, const ConfigFlags& flags, std::ostream& out) {
  const QuantConfig cfg = flags.build();
  const auto stack = LayerStack::from_archive(load_archive(a.in));
  const auto [calib, eval_x] = split_samples(load_samples(a.calib), cfg.calib_fraction);
  const auto rows = sweep(stack, calib, eval_x, cfg, a.budgets, a.jobs);
  const std::string csv = sweep_csv(rows);
  if (a.out.empty()) {
    out << csv;
  } else {
    write_text(a.out, csv);
    out << "wrote " << a.out << " (" << rows.size() << " rows)\n";
  }
  return kExitOk;
}

struct InspectArgs {
  std::string in, calib, format = "text";
  int bits = 3;
  double extra_bits = 0.0;
};

void print_report(std::ostream& out, const std::string& name, const SensitivityReport<float>& r,
                  const std::string& format) {
  std::vector<char> chosen(static_cast<std::size_t>(r.c_in()), 0);
  for (Index s : r.selected) chosen[static_cast<std::size_t>(s)] = 1;
  out << std::setprecision(9);
  if (format == "csv") {
    for (Index j = 0; j < r.c_in(); ++j) {
      out << name << ',' << j << ',' << r.lambda_diag[j] << ',' << r.delta_norms[j] << ',' << r.sensitivity[j] << ','
          << int(chosen[static_cast<std::size_t>(j)]) << '\n';
    }
    return;
  }
  out << name << ": selected [";
  for (std::size_t s = 0; s < r.selected.size(); ++s) out << (s ? ", " : "") << r.selected[s];
  out << "]\n";
  for (Index j = 0; j < r.c_in(); ++j) {
    out << "  col " << j << " lambda=" << r.lambda_diag[j] << " delta=" << r.delta_norms[j]
        << " sensitivity=" << r.sensitivity[j] << (chosen[static_cast<std::size_t>(j)] ? " *" : "") << "\n";
  }
}

int cmd_inspect(const InspectArgs& a, std::ostream& out) {
  const auto archive = load_archive(a.in);
  if (a.format == "csv") out << "layer,column,lambda,delta_norm,sensitivity,selected\n";

  const auto sens_entries = archive.names_with_prefix("layer.");
  bool any = false;
  for (const auto& name : sens_entries) {
    if (!name.ends_with(".sens.lambda")) continue;
    const std::string prefix = name.substr(0, name.size() - std::string(".sens.lambda").size());
    const auto report = read_sensitivity(archive, prefix);
    if (has_layer(archive, prefix)) {
      const auto layer = read_layer(archive, prefix);
      if (!std::equal(report.selected.begin(), report.selected.end(), layer.weak_indices.begin(),
                      layer.weak_indices.end())) {
        throw Error("layer '" + prefix + "': stored selection disagrees with weak_idx");
      }
    }
    print_report(out, prefix, report, a.format);
    any = true;
  }
  if (any) return kExitOk;

  // A full-precision model: score it against calibration data.
  if (a.calib.empty()) throw Error("archive holds no sensitivity reports; pass --calib to compute them");
  const auto stack = LayerStack::from_archive(archive);
  QuantConfig cfg;
  cfg.bits = a.bits;
  cfg.extra_bits = a.extra_bits;
  const auto model = quantize_model(stack, load_samples(a.calib), cfg);
  for (const auto& sl : stack.layers) print_report(out, sl.name, read_sensitivity(model.archive, sl.name), a.format);
  return kExitOk;
}

struct GenArgs {
  std::string out_model, out_calib, topology = "mlp";
  std::vector<Index> widths{64, 64, 64};
  Index d_model = 64;
  Index d_ff = 256;
  Index blocks = 1;
  Index samples = 1024;
  std::vector<std::string> outliers;
  std::uint64_t seed = 0;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
  std::uint64_t stream = a.seed;
  auto scaled = [&](Index rows, Index cols) {
    return MatrixF(gaussian_matrix(rows, cols, stream++) / std::sqrt(static_cast<float>(cols)));
  };
  LayerStack stack;
  if (a.topology == "mlp") {
    if (a.widths.size() < 2) throw Error("--widths needs at least two entries");
    std::vector<MatrixF> ws;
    for (std::size_t i = 0; i + 1 < a.widths.size(); ++i) ws.push_back(scaled(a.widths[i + 1], a.widths[i]));
    stack = LayerStack::mlp(ws);
  } else {
    std::vector<std::vector<MatrixF>> blocks;
    for (Index b = 0; b < a.blocks; ++b) {
      blocks.push_back({scaled(a.d_model, a.d_model), scaled(a.d_model, a.d_model), scaled(a.d_model, a.d_model),
                        scaled(a.d_model, a.d_model), scaled(a.d_ff, a.d_model), scaled(a.d_model, a.d_ff)});
    }
    stack = LayerStack::transformer(blocks);
  }

  SyntheticSpec spec;
  spec.c_in = stack.input_width();
  spec.c_out = 1;
  spec.n_samples = a.samples;
  spec.seed = stream++;
  for (const auto& o : a.outliers) {
    const auto colon = o.find(':');
    if (colon == std::string::npos) throw Error("--outliers entries must look like channel:scale");
    try {
      spec.outlier_channels.push_back({std::stoll(o.substr(0, colon)), std::stof(o.substr(colon + 1))});
    } catch (const std::logic_error&) {
      throw Error("bad --outliers entry '" + o + "'");
    }
  }
  const auto fixture = gen_synthetic(spec);
  save_archive(stack.to_archive(), a.out_model);
  TensorArchive calib;
  calib.add_f32(kCalibEntry, fixture.x);
  save_archive(calib, a.out_calib);
  out << "wrote " << a.out_model << " and " << a.out_calib << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Outlier-aware mixed-precision weight quantization"};
  app.require_subcommand(1);

  QuantizeArgs qa;
  ConfigFlags qflags;
  auto* quantize = app.add_subcommand("quantize", "Quantize a model archive");
  quantize->add_option("--in", qa.in, "Model archive")->required()->check(CLI::ExistingFile);
  quantize->add_option("--calib", qa.calib, "Calibration archive (calib.x)")->required()->check(CLI::ExistingFile);
  quantize->add_option("--out", qa.out, "Quantized archive to write")->required();
  quantize->add_option("--report", qa.report, "JSON report path (default <out>.report.json)");
  qflags.attach(*quantize);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a quantized (or dense) archive against the model");
  eval->add_option("--in", ea.in, "Model archive")->required()->check(CLI::ExistingFile);
  eval->add_option("--quantized", ea.quantized, "Archive to evaluate")->required()->check(CLI::ExistingFile);
  eval->add_option("--calib", ea.calib, "Sample archive (calib.x)")->required()->check(CLI::ExistingFile);
  eval->add_option("--calib-fraction", ea.calib_fraction, "Calibration share; the remainder is evaluated")
      ->check(CLI::Range(0.0, 1.0));
  eval->add_flag("--all-samples", ea.all_samples, "Evaluate on every sample");
  eval->add_option("--report", ea.report, "JSON report path");
  eval->add_flag("--bench", ea.bench, "Time the mixed kernel against the dense path");

  SweepArgs sa;
  ConfigFlags sflags;
  auto* sweep_cmd = app.add_subcommand("sweep", "Effective-bit sweep over extra-bit budgets");
  sweep_cmd->add_option("--in", sa.in, "Model archive")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--calib", sa.calib, "Calibration archive")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--budgets", sa.budgets, "Comma-separated extra-bit budgets")
      ->required()
      ->delimiter(',')
      ->check(CLI::NonNegativeNumber);
  sweep_cmd->add_option("--jobs", sa.jobs, "Parallel sweep points")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--out", sa.out, "CSV path (default stdout)");
  sflags.attach(*sweep_cmd);

  InspectArgs ia;
  auto* inspect = app.add_subcommand("inspect", "Print per-column sensitivities and selected columns");
  inspect->add_option("--in", ia.in, "Quantized or model archive")->required()->check(CLI::ExistingFile);
  inspect->add_option("--calib", ia.calib, "Calibration archive (model archives only)")->check(CLI::ExistingFile);
  inspect->add_option("--bits", ia.bits, "Target bits (model archives only)")->check(CLI::Range(kMinBits, kMaxBits));
  inspect->add_option("--extra-bits", ia.extra_bits, "Budget (model archives only)")->check(CLI::NonNegativeNumber);
  inspect->add_option("--format", ia.format, "text | csv")->check(CLI::IsMember({"text", "csv"}));

  GenArgs ga;
  auto* gen = app.add_subcommand("gen", "Write a synthetic model and calibration archive");
  gen->add_option("--out-model", ga.out_model, "Model archive to write")->required();
  gen->add_option("--out-calib", ga.out_calib, "Calibration archive to write")->required();
  gen->add_option("--topology", ga.topology, "mlp | transformer")->check(CLI::IsMember({"mlp", "transformer"}));
  gen->add_option("--widths", ga.widths, "MLP widths, input first")->delimiter(',');
  gen->add_option("--d-model", ga.d_model, "Transformer width")->check(CLI::PositiveNumber);
  gen->add_option("--d-ff", ga.d_ff, "Transformer MLP width")->check(CLI::PositiveNumber);
  gen->add_option("--blocks", ga.blocks, "Transformer blocks")->check(CLI::PositiveNumber);
  gen->add_option("--samples", ga.samples, "Calibration samples")->check(CLI::PositiveNumber);
  gen->add_option("--outliers", ga.outliers, "channel:scale list")->delimiter(',');
  gen->add_option("--seed", ga.seed, "Generator seed");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*quantize) return cmd_quantize(qa, qflags, out, err);
    if (*eval) return cmd_eval(ea, out);
    if (*sweep_cmd) return cmd_sweep(sa, sflags, out);
    if (*inspect) return cmd_inspect(ia, out);
    if (*gen) return cmd_gen(ga, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace owq::cli
