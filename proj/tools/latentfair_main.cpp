#include "latentfair/cli.hpp"

int main(int argc, char** argv) { return latentfair::cli::run(argc, argv); }
