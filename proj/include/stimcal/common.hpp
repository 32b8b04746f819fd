#pragma once

#include <cstdint>

namespace stimcal {

enum class Arm : std::uint8_t { arm1 = 1, arm2 = 2 };

// Currents are carried in units of elementary charge per second throughout;
// multiply by this to convert to amperes.
inline constexpr double kElementaryChargeCoulomb = 1.602176634e-19;

inline const char* arm_name(Arm arm) { return arm == Arm::arm1 ? "arm1" : "arm2"; }

}  // namespace stimcal
