#include "vitlab/cli.hpp"

int main(int argc, const char** argv) { return vitlab::run_cli(argc, argv); }
