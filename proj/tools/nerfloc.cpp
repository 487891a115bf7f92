#include "nerfloc/cli.hpp"

int main(int argc, char** argv) { return nerfloc::run_cli(argc, argv); }
