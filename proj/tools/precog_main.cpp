#include "commands.hpp"

int main(int argc, char** argv) { return precog::cli::run(argc, argv); }
