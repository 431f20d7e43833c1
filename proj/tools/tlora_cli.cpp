// SPDX-License-Identifier: Apache-2.0
#include "tlora/cli.hpp"

int main(int argc, char** argv) { return tlora::cli_main(argc, argv); }
