#include "aloe/cli.hpp"

int main(int argc, char** argv) { return aloe::cli::run_main(argc, argv); }
