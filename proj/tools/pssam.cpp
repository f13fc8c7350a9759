#include "pssam/cli.hpp"

int main(int argc, char** argv) {
    return pssam::cli::run(argc, argv, {std::cout, std::cerr});
}
