#include "tricoat/cli.hpp"

int main(int argc, char** argv) { return tricoat::run_cli(argc, argv); }
