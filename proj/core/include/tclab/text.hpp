#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace tclab {

// Shortest round-trip decimal text for a double (std::to_chars). Used for all
// CSV output so reruns are byte-identical and parsing is lossless.
std::string format_double(double v);

double parse_double(std::string_view s);
long parse_long(std::string_view s);
unsigned long long parse_ulong(std::string_view s);

std::vector<std::string> split(std::string_view line, char sep);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace tclab
