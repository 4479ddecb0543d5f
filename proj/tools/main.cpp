#include "kexp/cli.hpp"

int main(int argc, char** argv) {
  return kexp::run_cli(argc, argv);
}
