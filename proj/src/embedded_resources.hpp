#pragma once

#include <string_view>

namespace nuanced::detail {

/// Contents of a file under resources/, compiled in at build time.
/// Returns an empty view for unknown names.
std::string_view embedded_resource(std::string_view name);

}  // namespace nuanced::detail
