#include <capsumt/cli.hpp>

int main(int argc, char** argv) { return capsumt::run_cli(argc, argv); }
