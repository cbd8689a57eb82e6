#include "rpoly/runner.hpp"

int main(int argc, char** argv) { return rpoly::cli_main(argc, argv); }
