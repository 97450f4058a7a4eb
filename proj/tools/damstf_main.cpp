#include <string>
#include <vector>

#include "damstf/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return damstf::run_cli(args);
}
