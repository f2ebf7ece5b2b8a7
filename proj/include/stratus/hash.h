#pragma once

#include <cstddef>
#include <string>

#include "stratus/model.h"

namespace stratus {

std::string sha256_hex(const void* data, std::size_t n);
std::string sha256_hex(const std::string& s);

// Digest over the selected parameters: path bytes then raw values, in
// registry order. Any bit flip in any covered parameter changes the digest.
std::string params_hash(const ForecastModel& m, ParamFilter f);

}  // namespace stratus
