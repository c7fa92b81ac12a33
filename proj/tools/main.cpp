#include <iostream>

#include "crashcert/cli.hpp"

int main(int argc, char** argv) { return crashcert::cli_main(argc, argv, std::cout, std::cerr); }
