// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "ssom/cli.hpp"

int main(int argc, char** argv) {
    std::ios::sync_with_stdio(false);
    return ssom::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
