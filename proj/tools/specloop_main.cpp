#include "specloop/cli.hpp"

int main(int argc, char** argv) { return specloop::run_cli(argc, argv); }
