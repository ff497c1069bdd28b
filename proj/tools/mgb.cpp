#include "mgb/cli.hpp"

int main(int argc, char** argv) { return mgb::run_cli(argc, argv); }
