#include <iostream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "powergnn/cli.hpp"

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // training allocates and frees many mid-sized matrices per epoch; keep them off mmap
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  return powergnn::cli::run(argc, argv, std::cout, std::cerr);
}
