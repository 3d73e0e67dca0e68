#pragma once

#include <functional>
#include <string>

namespace sg::diag {

using Sink = std::function<void(const std::string&)>;

// Warning channel; defaults to stderr. Tests can install a capturing sink.
void set_warning_sink(Sink sink);
void warn(const std::string& message);

}  // namespace sg::diag
