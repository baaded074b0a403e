#include "qda/clock.hpp"

#include "qda/error.hpp"

namespace qda {

std::shared_ptr<Clock> make_clock(std::string_view kind) {
    if (kind == "system") return std::make_shared<SystemClock>();
    if (kind == "logical") return std::make_shared<LogicalClock>();
    throw Error(ErrorCode::invalid_argument, "unknown clock '" + std::string(kind) + "' (expected system or logical)");
}

} // namespace qda
