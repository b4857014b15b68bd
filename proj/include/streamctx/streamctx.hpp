#pragma once

#include "streamctx/error.hpp"
#include "streamctx/timeline.hpp"
#include "streamctx/retrieval.hpp"
#include "streamctx/context.hpp"
#include "streamctx/backend.hpp"
#include "streamctx/bench.hpp"
#include "streamctx/scoring.hpp"
#include "streamctx/profiler.hpp"
#include "streamctx/run.hpp"
