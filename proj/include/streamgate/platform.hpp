#pragma once

namespace streamgate {

// Keeps large attention buffers on the heap between training steps instead of
// returning them to the OS after every sample (glibc only; no-op elsewhere).
void tune_allocator();

}  // namespace streamgate
