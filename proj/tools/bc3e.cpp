#include "bc3e/cli.hpp"

int main(int argc, char** argv) { return bc3e::run_cli(argc, argv); }
