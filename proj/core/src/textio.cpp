#include "bodynerf/textio.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace bodynerf {

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  BN_CHECK(f.good(), "cannot open ", path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  BN_CHECK(f.good(), "cannot open ", path, " for writing");
  f << content;
  BN_CHECK(f.good(), "write to ", path, " failed");
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Trim to the shortest representation that round-trips.
  for (int prec = 1; prec < 17; ++prec) {
    char shorter[32];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

TextDoc TextDoc::read_file(const std::string& path) {
  return from_string(read_text_file(path), path);
}

TextDoc TextDoc::from_string(const std::string& text, const std::string& name) {
  TextDoc doc;
  doc.name_ = name;
  std::istringstream is(text);
  std::string raw;
  int no = 0;
  while (std::getline(is, raw)) {
    ++no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    Line line;
    line.no = no;
    std::istringstream ls(raw);
    std::string tok;
    while (ls >> tok) {
      if (tok[0] == '#') break;
      line.tokens.push_back(tok);
    }
    if (!line.tokens.empty()) doc.lines_.push_back(std::move(line));
  }
  return doc;
}

const TextDoc::Line& TextDoc::peek() const {
  BN_CHECK(!eof(), name_, ": unexpected end of file");
  return lines_[cursor_];
}

TextDoc::Line TextDoc::take() {
  BN_CHECK(!eof(), name_, ": unexpected end of file");
  return lines_[cursor_++];
}

TextDoc::Line TextDoc::expect(const std::string& keyword) {
  Line l = take();
  if (l.tokens[0] != keyword)
    fail_at(l, "expected '", keyword, "', found '", l.tokens[0], "'");
  return l;
}

const std::string& TextDoc::str(const Line& l, size_t tok) const {
  if (tok >= l.tokens.size())
    fail_at(l, "expected at least ", tok + 1, " fields, found ",
            l.tokens.size());
  return l.tokens[tok];
}

double TextDoc::num(const Line& l, size_t tok) const {
  const std::string& s = str(l, tok);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size())
    fail_at(l, "field ", tok, ": '", s, "' is not a number");
  return v;
}

std::int64_t TextDoc::integer(const Line& l, size_t tok) const {
  const std::string& s = str(l, tok);
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size())
    fail_at(l, "field ", tok, ": '", s, "' is not an integer");
  return static_cast<std::int64_t>(v);
}

}  // namespace bodynerf
