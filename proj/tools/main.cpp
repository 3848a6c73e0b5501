#include "fxemu/cli.hpp"

int main(int argc, char** argv) { return fxemu::run_cli(argc, argv); }
