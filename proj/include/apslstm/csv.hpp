#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace apslstm::csv {

// Splits on commas; no quoting support. Trims surrounding whitespace and a
// trailing carriage return from each field.
std::vector<std::string> split_line(std::string_view line);

// Full-string decimal parse. Returns false on junk or trailing characters.
bool parse_double(std::string_view text, double& out);

// Shortest representation that round-trips to the same double.
std::string format_double(double value);

}  // namespace apslstm::csv
