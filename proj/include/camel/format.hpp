#pragma once

#include <string>

namespace camel {

// Shortest round-trip decimal formatting for report emission; infinities
// print as "inf"/"-inf". Identical input always yields identical bytes.
std::string format_number(double value);

} // namespace camel
