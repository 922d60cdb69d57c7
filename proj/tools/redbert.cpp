#include "redbert/cli.hpp"

int main(int argc, char** argv) { return redbert::cli_dispatch(argc, argv); }
