#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bodynerf/common.hpp"

namespace bodynerf {

/// Line/token reader for the project's structured-text formats. Tracks the
/// source line so parse errors always point at the offending field. Blank
/// lines and lines starting with '#' are skipped.
class TextDoc {
 public:
  struct Line {
    int no = 0;
    std::vector<std::string> tokens;
  };

  static TextDoc read_file(const std::string& path);
  static TextDoc from_string(const std::string& text, const std::string& name);

  bool eof() const { return cursor_ >= lines_.size(); }
  const Line& peek() const;
  Line take();
  /// Takes the next line and checks its first token.
  Line expect(const std::string& keyword);

  double num(const Line& l, size_t tok) const;
  std::int64_t integer(const Line& l, size_t tok) const;
  const std::string& str(const Line& l, size_t tok) const;

  template <typename... Args>
  [[noreturn]] void fail_at(const Line& l, const Args&... args) const {
    fail(name_, ":", l.no, ": ", args...);
  }
  template <typename... Args>
  [[noreturn]] void fail_doc(const Args&... args) const {
    fail(name_, ": ", args...);
  }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  std::vector<Line> lines_;
  size_t cursor_ = 0;
};

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
/// Shortest round-trip-exact formatting for doubles.
std::string fmt_double(double v);

}  // namespace bodynerf
