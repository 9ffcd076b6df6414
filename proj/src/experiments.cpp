#include "embsurg/experiments.hpp"

namespace embsurg {}  // expanded below as the harness grows
