#ifndef FEDSIM_CONFIG_HPP
#define FEDSIM_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>

#include "fedsim/sim.hpp"

namespace fedsim {

using KeyValues = std::map<std::string, std::string>;

// Flat "section.key = value" lines; '#' starts a comment. Unknown keys are
// rejected at resolve time, not parse time.
KeyValues parse_config_text(const std::string& text);
KeyValues parse_config_file(const std::string& path);

struct ResolvedConfig {
    ExperimentConfig experiment;
    KeyValues resolved; // every key, defaults filled in, values normalized
};

// Applies defaults, validates ranges, and produces the canonical key set.
ResolvedConfig resolve_config(const KeyValues& kv);

// Sorted "key = value" lines; stable under input key reordering.
std::string canonical_text(const KeyValues& kv);

// FNV-1a64 over the canonical text.
std::uint64_t config_hash(const KeyValues& kv);

std::string format_double(double v); // shortest round-trip formatting

} // namespace fedsim

#endif
