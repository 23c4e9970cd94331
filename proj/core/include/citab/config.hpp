// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include <json.hpp>

namespace citab {

/// Parse a TOML-subset config document into a JSON value tree.
///
/// Supported: `[section]` and `[[array.of.tables]]` headers with dotted
/// paths, `key = value` pairs with bare or quoted keys, basic strings,
/// integers, floats, booleans, and (possibly multiline) arrays of scalars.
/// `#` starts a comment. Unsupported TOML constructs raise IoError with the
/// offending line number.
nlohmann::json parse_toml(const std::string& text);

nlohmann::json load_toml_file(const std::string& path);

}  // namespace citab
