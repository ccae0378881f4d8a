#include "contactlab/errors.hpp"

#include <utility>

namespace contactlab {

namespace {
thread_local std::vector<std::string> g_warnings;
}

void warn(std::string message) { g_warnings.push_back(std::move(message)); }

std::vector<std::string> take_warnings() {
  std::vector<std::string> out;
  out.swap(g_warnings);
  return out;
}

std::size_t pending_warning_count() { return g_warnings.size(); }

}  // namespace contactlab
