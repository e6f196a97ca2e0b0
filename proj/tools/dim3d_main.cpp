#include <string>
#include <vector>

#include "dim3d/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dim3d::cli::run(args);
}
