#include "railpdm/cli.hpp"

int main(int argc, char** argv) { return railpdm::cli::run_cli(argc, argv); }
