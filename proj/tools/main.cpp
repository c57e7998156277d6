#include "mkmed/cli.hpp"

int main(int argc, char** argv) { return mkmed::cli_main(argc, argv); }
