#pragma once

// Variational policy gradients: posterior sampling of policy parameters by
// KL minimization through invertible transformations, with a log-determinant
// repulsion term, wired into REINFORCE-, TRPO-, and PPO-style training.

#include "vpg/algos.hpp"
#include "vpg/checkpoint.hpp"
#include "vpg/config.hpp"
#include "vpg/envs.hpp"
#include "vpg/estimators.hpp"
#include "vpg/gradcheck.hpp"
#include "vpg/klengine.hpp"
#include "vpg/numcore.hpp"
#include "vpg/policy.hpp"
#include "vpg/runner.hpp"
#include "vpg/transform.hpp"
