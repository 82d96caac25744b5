#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "lthead/numerics.hpp"

namespace lthead {

struct GradCheckCase {
  std::string module;  // losses, decoder or calibrators
  std::string name;
  GradCheckReport report;
};

/// Finite-difference checks of every analytic gradient in the library.
/// `module` is one of all, losses, decoder, calibrators (ConfigError otherwise).
std::vector<GradCheckCase> run_gradcheck(std::string_view module,
                                         const GradCheckOptions& options = {});

}  // namespace lthead
