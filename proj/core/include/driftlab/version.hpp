// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string_view>

namespace driftlab {

std::string_view library_version() noexcept;

}  // namespace driftlab
