#include "grobust/cli.hpp"

int main(int argc, char** argv) { return grobust::run_cli(argc, argv); }
