#include <iostream>

#include "dres/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dres::cli::dispatch(args, std::cout, std::cerr).exit_code;
}
