#include "tve/cli.hpp"

int main(int argc, char** argv) { return tve::cli::run(argc, argv); }
