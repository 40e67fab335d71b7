#include "deformnet/harness/runtime.hpp"

#include <malloc.h>

extern "C" void openblas_set_num_threads(int num_threads);

namespace deformnet::harness {

void configure_runtime() {
  // Training allocates and frees the same large tensors every step; with the
  // default thresholds glibc maps and unmaps them each time.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);  // the largest value glibc accepts
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
  openblas_set_num_threads(1);
}

}  // namespace deformnet::harness
