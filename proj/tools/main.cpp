#include "vbn/cli.hpp"

int main(int argc, char** argv) { return vbn::cli::run(argc, argv); }
