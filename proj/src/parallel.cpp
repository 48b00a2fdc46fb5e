#include "compact_sdf/parallel.hpp"

#include <cstdlib>
#include <string>

namespace csdf {

std::size_t worker_count() {
  if (const char* env = std::getenv("COMPACT_SDF_THREADS")) {
    try {
      const long value = std::stol(env);
      if (value > 0) return static_cast<std::size_t>(value);
    } catch (...) {
      // fall through to the hardware default
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace csdf
