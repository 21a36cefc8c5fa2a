#pragma once

#include <cstdint>
#include <span>

#include "workbench/manifest.hpp"

namespace wb {

Digest256 sha256(std::span<const std::uint8_t> bytes);

}  // namespace wb
