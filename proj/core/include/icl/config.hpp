#pragma once

namespace icl {

// Scalar type for all numeric work. The default build uses 32-bit floats;
// defining ICL_REAL64 (the icl_core64 library) switches the whole core to
// doubles for finite-difference gradient checking. Checkpoints are always
// 32-bit on disk regardless of build.
#ifdef ICL_REAL64
using real = double;
#else
using real = float;
#endif

inline constexpr int kVersionMajor = 1;
inline constexpr int kVersionMinor = 0;

} // namespace icl
