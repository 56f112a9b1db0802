#include "histoad/cli.hpp"

int main(int argc, char** argv) { return histoad::run_cli(argc, argv); }
