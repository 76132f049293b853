// SPDX-License-Identifier: Apache-2.0

#include "vidgan_cli.hpp"

int main(int argc, char** argv) { return vidgan::cli::run(argc, argv); }
