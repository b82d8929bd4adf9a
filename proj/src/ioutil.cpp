#include "distil/ioutil.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "distil/errors.hpp"

namespace distil {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError("cannot write " + path);
  }
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) {
    throw DataError("short write to " + path);
  }
}

}  // namespace distil
