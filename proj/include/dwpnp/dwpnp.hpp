#pragma once

// Umbrella header.

#include "dwpnp/commands.hpp"
#include "dwpnp/dynaweight.hpp"
#include "dwpnp/errors.hpp"
#include "dwpnp/io.hpp"
#include "dwpnp/liegeo.hpp"
#include "dwpnp/metrics.hpp"
#include "dwpnp/objectives.hpp"
#include "dwpnp/pointset.hpp"
#include "dwpnp/solvers.hpp"
#include "dwpnp/spatial.hpp"
#include "dwpnp/synthlab.hpp"
