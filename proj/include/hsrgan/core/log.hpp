#pragma once

#include <functional>
#include <string>

namespace hsrgan {

using LogSink = std::function<void(const std::string&)>;

// Warnings go to stderr unless a sink is installed. Returns the previous sink.
LogSink set_warning_sink(LogSink sink);
void warn(const std::string& message);

}  // namespace hsrgan
