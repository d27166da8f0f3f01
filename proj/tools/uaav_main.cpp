#include "uaav/cli.hpp"

int main(int argc, char** argv) { return uaav::cli::run(argc, argv); }
