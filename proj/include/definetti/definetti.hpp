#pragma once

#include "definetti/common.hpp"
#include "definetti/contracts.hpp"
#include "definetti/empirical.hpp"
#include "definetti/oracle.hpp"
#include "definetti/portfolio.hpp"
#include "definetti/rng.hpp"
#include "definetti/solvers.hpp"
