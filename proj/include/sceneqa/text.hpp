#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace sceneqa::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

// Collapses runs of whitespace (including newlines) to single spaces and trims.
std::string squash_whitespace(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Lowercased alphanumeric word tokens; everything else is a separator.
std::vector<std::string> word_tokens(std::string_view s);

bool ends_with_terminal_punct(std::string_view s);

}  // namespace sceneqa::text
