#include "cli.hpp"

int main(int argc, char** argv) { return laso::cli::run(argc, argv); }
