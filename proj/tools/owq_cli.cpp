// Copyright 2026 The owq-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "owq/cli.hpp"

int main(int argc, char** argv) { return owq::cli::run(argc, argv); }
