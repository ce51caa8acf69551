#include "rlt/cli.hpp"

int main(int argc, char** argv) { return rlt::run_cli(argc, argv); }
