#include "sparsegrasp/diag.hpp"

#include <cstdio>
#include <utility>

namespace sg::diag {

namespace {
Sink g_sink;
}

void set_warning_sink(Sink sink) { g_sink = std::move(sink); }

void warn(const std::string& message) {
    if (g_sink) {
        g_sink(message);
    } else {
        std::fprintf(stderr, "[warn] %s\n", message.c_str());
    }
}

}  // namespace sg::diag
