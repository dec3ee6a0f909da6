#pragma once

#if defined(__GLIBC__) || __has_include(<malloc.h>)
#include <malloc.h>
#endif

namespace carrylab {

// Training allocates and frees many mid-sized activation buffers per step.
// Keeping them on the heap instead of fresh mmap regions avoids a page-fault
// storm on glibc. No-op elsewhere.
inline void tune_allocator() {
#if defined(M_MMAP_THRESHOLD) && defined(M_TRIM_THRESHOLD)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace carrylab
