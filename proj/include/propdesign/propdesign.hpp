#pragma once

#include "propdesign/blocks.hpp"
#include "propdesign/equivalence.hpp"
#include "propdesign/errors.hpp"
#include "propdesign/linalg.hpp"
#include "propdesign/model.hpp"
#include "propdesign/optimizer.hpp"
#include "propdesign/sequence.hpp"

namespace propdesign {
inline constexpr const char* kVersion = "0.1.0";
}
