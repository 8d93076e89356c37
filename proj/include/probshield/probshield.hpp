#pragma once

#include "probshield/arena.hpp"
#include "probshield/behavior.hpp"
#include "probshield/error.hpp"
#include "probshield/io.hpp"
#include "probshield/model_checker.hpp"
#include "probshield/progress_sets.hpp"
#include "probshield/quotient_mdp.hpp"
#include "probshield/rl_agent.hpp"
#include "probshield/scenarios.hpp"
#include "probshield/shield.hpp"
#include "probshield/zones.hpp"
