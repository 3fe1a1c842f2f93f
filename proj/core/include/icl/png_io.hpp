#pragma once

#include <string>

#include "icl/canvas.hpp"

namespace icl {

// 8-bit RGB PNG I/O. Pixel byte p maps to scalar 2*(p/255) - 1; the inverse
// rounds half away from zero, so u8 -> float -> u8 is exact for all 256 values.
Canvas read_png(const std::string& path);
void write_png(const std::string& path, const Canvas& canvas);

uint8_t scalar_to_u8(real v);
real u8_to_scalar(uint8_t p);

} // namespace icl
