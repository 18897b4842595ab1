#pragma once

#include <memory>
#include <string>

#include "urbanln/pretrain.hpp"

namespace urbanln {

// Versioned binary archive: magic + JSON metadata (configs, step counters)
// followed by named float64 arrays (student/teacher parameters, optimizer
// moments, queue contents). Writes are atomic; loading a truncated or
// mismatched file raises StateError naming the failing field.
void save_checkpoint(const Trainer& trainer, const std::string& path);
std::unique_ptr<Trainer> load_checkpoint(const std::string& path);

} // namespace urbanln
