#include "dfr/cli.hpp"

int main(int argc, char** argv) { return dfr::cli::run(argc, argv); }
