#include "uaav/cli.hpp"

namespace uaav::cli {

int run(int, char**) { return kExitConfigError; }

}  // namespace uaav::cli
