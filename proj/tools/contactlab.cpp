#include <iostream>

#include "contactlab/harness/cli.hpp"

int main(int argc, char** argv) {
  return contactlab::harness::run_cli(argc, argv, std::cout, std::cerr);
}
