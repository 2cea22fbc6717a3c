// SPDX-License-Identifier: Apache-2.0
#include "shapereg/cli.hpp"

int main(int argc, char** argv) {
    try {
        return shapereg::cli::run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "fatal: " << e.what() << "\n";
        return 1;
    }
}
