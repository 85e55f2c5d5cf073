#pragma once

// Minimal RFC 4180 helpers: CRLF records, fields quoted only when needed.

#include <string>
#include <string_view>
#include <vector>

namespace circuitlab {

std::string csv_field(std::string_view value);
std::string csv_row(const std::vector<std::string>& fields);  // with trailing CRLF
// Accepts CRLF or LF record ends. Throws std::invalid_argument on an
// unterminated quote.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

// Shortest text that reads back to the same double.
std::string format_number(double value);

}  // namespace circuitlab
