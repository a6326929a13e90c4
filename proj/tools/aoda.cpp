#include "aoda/cli.hpp"

int main(int argc, char** argv) { return aoda::cli::run(argc, argv); }
