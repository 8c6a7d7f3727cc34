#include "pulsedrf/format.hpp"

#include <array>
#include <charconv>
#include <cmath>

namespace pulsedrf {

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (value == 0.0) value = 0.0;  // drop the sign of -0
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return {buf.data(), res.ptr};
}

}  // namespace pulsedrf
