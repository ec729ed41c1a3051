#pragma once

#include <string>

#include "omdpg/ccga.hpp"
#include "omdpg/gqc.hpp"

namespace omdpg::snapshot {

// Versioned binary checkpoint of the full policy stack: every actor group,
// every critic head, their targets, and all optimizer moments. Round trips
// bit-exactly on the writing machine (native byte order, raw doubles).
void save_stack(const std::string& path, const ccga::GroupedActors& actors,
                const gqc::CriticEnsemble& ensemble);

// Overwrites both structures with the file contents. Throws ConfigError on a
// missing file, bad magic, or truncation.
void load_stack(const std::string& path, ccga::GroupedActors& actors,
                gqc::CriticEnsemble& ensemble);

}  // namespace omdpg::snapshot
