// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "rvtee/cli.hpp"

int main(int argc, char** argv) {
  return rvtee::cli::run(argc, argv, std::cin, std::cout, std::cerr);
}
