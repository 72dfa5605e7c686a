// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OWQ_CLI_HPP_
#define OWQ_CLI_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace owq::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Subcommands: quantize, eval, sweep, inspect, gen. args excludes argv[0].
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace owq::cli

#endif  // OWQ_CLI_HPP_
