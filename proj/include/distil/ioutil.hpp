#pragma once

#include <string>
#include <string_view>

namespace distil {

// Shortest representation that parses back to the exact same double.
std::string format_double(double v);

// Strict parse of a full token; throws DataError on trailing junk.
double parse_double(std::string_view s);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

}  // namespace distil
