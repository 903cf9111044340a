#pragma once

#include "causalpred/types.hpp"
#include "causalpred/model.hpp"
#include "causalpred/ode.hpp"
#include "causalpred/estimators.hpp"
#include "causalpred/validation.hpp"
#include "causalpred/simulation.hpp"
#include "causalpred/io.hpp"
