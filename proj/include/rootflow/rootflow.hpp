#pragma once

#include "rootflow/circle_measures.hpp"
#include "rootflow/error.hpp"
#include "rootflow/nonlocal_ops.hpp"
#include "rootflow/parallel.hpp"
#include "rootflow/particle_flow.hpp"
#include "rootflow/serialization.hpp"
#include "rootflow/trig_roots.hpp"
#include "rootflow/viscosity_solver.hpp"
