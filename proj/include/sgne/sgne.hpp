#pragma once

#include <sgne/bench.hpp>
#include <sgne/comm_graph.hpp>
#include <sgne/common.hpp>
#include <sgne/diagnostics.hpp>
#include <sgne/fb_operators.hpp>
#include <sgne/game_model.hpp>
#include <sgne/io.hpp>
#include <sgne/solver.hpp>
