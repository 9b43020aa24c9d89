#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace keyforge::csv {

/// Splits one CSV line into fields. Handles RFC 4180 quoting (embedded
/// commas and doubled quotes); a trailing '\r' is dropped.
std::vector<std::string> split_line(std::string_view line);

/// Quotes a field when it contains a comma, quote or newline.
std::string quote(std::string_view field);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

/// Strict full-field number parse; returns false on trailing garbage.
bool parse_double(std::string_view text, double& out);
bool parse_int(std::string_view text, long long& out);

}  // namespace keyforge::csv
