#pragma once

#include "spdelab/errors.hpp"
#include "spdelab/spectral.hpp"
#include "spdelab/model.hpp"
#include "spdelab/rng.hpp"
#include "spdelab/stepper.hpp"
#include "spdelab/adiabatic.hpp"
#include "spdelab/integrator.hpp"
#include "spdelab/mc.hpp"
#include "spdelab/config.hpp"
#include "spdelab/commands.hpp"
