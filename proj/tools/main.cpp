#include "commands.hpp"

int main(int argc, char** argv) { return zipmo::cli::run(argc, argv); }
