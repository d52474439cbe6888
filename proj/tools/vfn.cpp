#include "vfn/cli.hpp"

int main(int argc, char** argv) { return vfn::cli::run(argc, argv); }
