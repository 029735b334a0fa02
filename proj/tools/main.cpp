// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#include "deepbound_cli.hpp"

int main(int argc, char** argv) { return deepbound::cli::run(argc, argv); }
