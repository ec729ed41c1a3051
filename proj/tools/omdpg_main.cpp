#include "omdpg/harness.hpp"

int main(int argc, char** argv) {
  return omdpg::harness::cli_main(argc, argv);
}
