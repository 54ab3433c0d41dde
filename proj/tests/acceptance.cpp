// Acceptance suite: one pass/fail line per criterion.
#include <cstdio>

#include "splitflow/scenario.hpp"

int main() {
  std::printf("acceptance placeholder\n");
  return 1;
}
