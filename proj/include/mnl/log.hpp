#pragma once

#include <functional>
#include <iostream>
#include <string>

namespace mnl {

using WarningSink = std::function<void(const std::string&)>;

inline WarningSink& warning_sink() {
    static WarningSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
    return sink;
}

inline void warn(const std::string& msg) {
    if (warning_sink()) warning_sink()(msg);
}

/// Replaces the warning sink for the lifetime of the guard (used by tests to capture warnings).
class ScopedWarningSink {
public:
    explicit ScopedWarningSink(WarningSink sink) : previous_(std::move(warning_sink())) {
        warning_sink() = std::move(sink);
    }
    ScopedWarningSink(const ScopedWarningSink&) = delete;
    ScopedWarningSink& operator=(const ScopedWarningSink&) = delete;
    ~ScopedWarningSink() { warning_sink() = std::move(previous_); }

private:
    WarningSink previous_;
};

}  // namespace mnl
