#include <string>
#include <vector>

#include "panelcf/cli.hpp"

int main(int argc, char** argv) {
  return panelcf::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
