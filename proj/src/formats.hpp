// Shared binary payload encoders for the parameter, ensemble and stats files.
#pragma once

#include <string>

#include "frontflow/fields.hpp"
#include "io_util.hpp"

namespace frontflow::detail {

void encode_parameter_vector(ByteWriter& w, const ParameterVector& u);
ParameterVector decode_parameter_vector(ByteReader& r, const std::string& ctx);

}  // namespace frontflow::detail
