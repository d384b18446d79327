#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace neurocad {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parser failure carrying where in the input it happened.
class ParseError : public Error {
public:
    enum class Unit { byte, line };

    ParseError(const std::string& what, std::size_t position, Unit unit)
        : Error(what), position_(position), unit_(unit) {}

    std::size_t position() const noexcept { return position_; }
    Unit unit() const noexcept { return unit_; }

private:
    std::size_t position_;
    Unit unit_;
};

}  // namespace neurocad
