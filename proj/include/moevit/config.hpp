#pragma once

#include <string>
#include <vector>

#include "moevit/model.hpp"

namespace moevit {

/// Everything a training run needs: architecture, optimizer settings,
/// and the synthetic task. Parsed from key=value lines; command-line
/// overrides are applied on top and win.
struct RunConfig {
  AttentionSpec spec;
  TrainOptions opt;
  SyntheticTask task;

  /// Apply one `key=value` assignment. Unknown keys are a hard error.
  void set(const std::string& key, const std::string& value);
};

/// Parse a config file: one `key=value` per line, `#` starts a comment,
/// blank lines ignored. Throws config_error on unknown keys or
/// malformed lines.
RunConfig parse_config_file(const std::string& path);

/// Parse config text directly (the file parser's core).
RunConfig parse_config_text(const std::string& text);

/// Render the effective configuration back as key=value lines.
std::string dump_config(const RunConfig& cfg);

}  // namespace moevit
