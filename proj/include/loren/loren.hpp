#pragma once

#include "loren/covariance.hpp"
#include "loren/estimators.hpp"
#include "loren/objectives.hpp"
#include "loren/optimizers.hpp"
#include "loren/perturb.hpp"
#include "loren/shapes.hpp"
#include "loren/stream.hpp"
