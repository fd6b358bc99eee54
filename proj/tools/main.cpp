// SPDX-License-Identifier: Apache-2.0
#include "satswin/cli.hpp"

int main(int argc, char** argv) { return satswin::cli::run_cli(argc, argv); }
