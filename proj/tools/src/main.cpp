#include "sedepth_cli/cli.hpp"

int main(int argc, char** argv) { return sedepth::cli::main_entry(argc, argv); }
