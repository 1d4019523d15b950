#include "cli.hpp"

int main(int argc, char** argv) { return ftwa::cli::run(argc, argv); }
