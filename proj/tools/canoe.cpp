#include "canoe/cli.hpp"

int main(int argc, char** argv) { return canoe::cli::run(argc, argv); }
