#pragma once

#include <string>
#include <string_view>

namespace depthfake {

// `git describe` of the source tree at build time.
std::string_view code_version();

std::string sha256_hex(std::string_view bytes);

}  // namespace depthfake
