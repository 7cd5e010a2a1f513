#include "commands.hpp"

int main(int argc, char** argv) { return dpmusic::cli::run(argc, argv); }
