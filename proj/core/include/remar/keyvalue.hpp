#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

namespace remar {

using KeyValues = std::map<std::string, std::string>;

/// Parses `key=value` lines. Blank lines and lines starting with '#' are
/// skipped; surrounding whitespace is trimmed.
KeyValues parse_key_values(std::istream& in);
KeyValues load_key_values(const std::filesystem::path& path);
void write_key_values(std::ostream& out, const KeyValues& kv);

}  // namespace remar
