// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "rayserde/cli.hpp"

int main(int argc, char** argv) {
    return rayserde::cli::run(argc, argv, std::cout, std::cerr);
}
