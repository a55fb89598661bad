#include "twostage/cli.hpp"

int main(int argc, char** argv) { return twostage::cli::run(argc, argv); }
