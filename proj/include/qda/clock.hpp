#pragma once

#include "qda/model.hpp"

#include <atomic>
#include <chrono>
#include <memory>

namespace qda {

class Clock {
public:
    virtual ~Clock() = default;
    virtual Timestamp now() = 0;
};

class SystemClock final : public Clock {
public:
    Timestamp now() override {
        auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::system_clock::now().time_since_epoch());
        return Timestamp{ms.count()};
    }
};

/// Deterministic clock: every call advances one second from a fixed origin.
/// Used for reproducible session documents across front ends.
class LogicalClock final : public Clock {
public:
    explicit LogicalClock(Timestamp origin = Timestamp{1735689600000}) : next_(origin.unix_ms) {}
    Timestamp now() override { return Timestamp{next_.fetch_add(1000)}; }

private:
    std::atomic<std::int64_t> next_;
};

std::shared_ptr<Clock> make_clock(std::string_view kind);

} // namespace qda
