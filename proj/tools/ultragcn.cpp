#include "ultragcn/cli.hpp"

int main(int argc, char** argv) { return ultragcn::cli::run(argc, argv); }
