#pragma once

#include <cstddef>
#include <string_view>

namespace rlt {

// Writes "rlt: warning: <msg>" to stderr unless silenced.
void warn(std::string_view msg);
// Number of warnings issued by this process; used by tests.
std::size_t warning_count();
void set_warnings_silenced(bool silenced);

}  // namespace rlt
