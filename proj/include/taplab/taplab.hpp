#pragma once

#include "taplab/quadrature.hpp"
#include "taplab/prior.hpp"
#include "taplab/scalar_channel.hpp"
#include "taplab/rs_potential.hpp"
#include "taplab/linear_model.hpp"
#include "taplab/free_energy.hpp"
#include "taplab/amp.hpp"
#include "taplab/ngd.hpp"
#include "taplab/oracle.hpp"
#include "taplab/rng.hpp"
#include "taplab/config.hpp"
#include "taplab/experiments.hpp"
