#include "unif/cli.hpp"

int main(int argc, char** argv) { return unif::run_cli(argc, argv); }
