#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace bodynerf {

/// Error thrown on any contract violation (bad shapes, malformed files,
/// invalid configs). Carries a plain what() message with the offending values.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

template <typename... Args>
[[noreturn]] void fail(const Args&... args) {
  throw Error(cat(args...));
}

}  // namespace bodynerf

#define BN_CHECK(cond, ...)                  \
  do {                                       \
    if (!(cond)) ::bodynerf::fail(__VA_ARGS__); \
  } while (0)
