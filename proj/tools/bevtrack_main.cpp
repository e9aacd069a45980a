#include "bevtrack/cli.hpp"

int main(int argc, char** argv) { return bevtrack::cli_main(argc, argv); }
