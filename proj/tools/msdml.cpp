#include "msdml/cli.hpp"

int main(int argc, char** argv) { return msdml::cli::cli_dispatch(argc, argv); }
