#include "depthfake/cli.hpp"

int main(int argc, char** argv) { return depthfake::cli::run(argc, argv); }
