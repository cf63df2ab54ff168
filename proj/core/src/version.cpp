// SPDX-License-Identifier: Apache-2.0
#include "driftlab/version.hpp"

namespace driftlab {

std::string_view library_version() noexcept { return DRIFTLAB_VERSION_STRING; }

}  // namespace driftlab
