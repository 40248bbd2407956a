#pragma once

// Umbrella header: exact and variational Bayesian inference for the
// discrete-choice multinomial probit model with a Gaussian prior.

#include "mnp/errors.hpp"
#include "mnp/io.hpp"
#include "mnp/linalg.hpp"
#include "mnp/model.hpp"
#include "mnp/mvn.hpp"
#include "mnp/normal.hpp"
#include "mnp/pfm.hpp"
#include "mnp/rng.hpp"
#include "mnp/summary.hpp"
#include "mnp/sun.hpp"
#include "mnp/tmvn.hpp"
