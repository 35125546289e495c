#include <malloc.h>

#include <string>
#include <vector>

#include "readlab/cli/cli.hpp"

int main(int argc, char** argv) {
  // Training allocates and frees the same large buffers every step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return readlab::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
