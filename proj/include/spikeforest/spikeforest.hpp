#pragma once

#include "abc.hpp"
#include "bart.hpp"
#include "core.hpp"
#include "io.hpp"
#include "marginal.hpp"
#include "parallel.hpp"
#include "priors.hpp"
#include "rng.hpp"
#include "sf_mcmc.hpp"
#include "simbench.hpp"
#include "theory.hpp"
