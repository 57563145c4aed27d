#pragma once

// Umbrella header: the full library surface.

#include "orchmoe/analysis.hpp"
#include "orchmoe/baselines.hpp"
#include "orchmoe/checkpoint.hpp"
#include "orchmoe/cli.hpp"
#include "orchmoe/composition.hpp"
#include "orchmoe/config.hpp"
#include "orchmoe/errors.hpp"
#include "orchmoe/finite_diff.hpp"
#include "orchmoe/gradcheck_suite.hpp"
#include "orchmoe/lora.hpp"
#include "orchmoe/model.hpp"
#include "orchmoe/optim.hpp"
#include "orchmoe/rng.hpp"
#include "orchmoe/skill_router.hpp"
#include "orchmoe/synthetic.hpp"
#include "orchmoe/task_router.hpp"
#include "orchmoe/tensor.hpp"
#include "orchmoe/train.hpp"
