#pragma once

#include <array>
#include <cstdint>

namespace amil {

extern const std::array<std::array<std::uint8_t, 3>, 256> kBlueRedColormap;

}  // namespace amil
