#include "inbiased/cli.hpp"

int main(int argc, char** argv) { return inbiased::cli::main(argc, argv); }
