#pragma once

#include <string>

namespace muan {

enum class Task { vqa, grounding };

std::string to_string(Task task);
// Throws ConfigError for anything other than "vqa" or "grounding".
Task parse_task(const std::string& name);

}  // namespace muan
