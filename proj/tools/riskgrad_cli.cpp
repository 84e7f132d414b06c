#include "riskgrad/cli.hpp"

int main(int argc, char** argv) { return riskgrad::cli::run(argc, argv); }
