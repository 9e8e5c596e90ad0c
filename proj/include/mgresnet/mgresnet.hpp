#pragma once

#include "mgresnet/errors.hpp"
#include "mgresnet/net.hpp"
#include "mgresnet/objective.hpp"
#include "mgresnet/transfer.hpp"
#include "mgresnet/hierarchy.hpp"
#include "mgresnet/data.hpp"
#include "mgresnet/mgopt.hpp"
#include "mgresnet/harness.hpp"
