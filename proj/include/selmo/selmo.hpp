#pragma once

#include "selmo/agent.hpp"
#include "selmo/config.hpp"
#include "selmo/core.hpp"
#include "selmo/csv.hpp"
#include "selmo/envs.hpp"
#include "selmo/error.hpp"
#include "selmo/eval.hpp"
#include "selmo/hierarchy.hpp"
#include "selmo/neural.hpp"
#include "selmo/orchestrator.hpp"
#include "selmo/replay.hpp"
#include "selmo/rng.hpp"
#include "selmo/serialize.hpp"
#include "selmo/worldmodel.hpp"
