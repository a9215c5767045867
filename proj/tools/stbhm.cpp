#include "stbhm/cli.hpp"

int main(int argc, char** argv) { return stbhm::cli_entry(argc, argv); }
