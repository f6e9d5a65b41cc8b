#pragma once

#include "sfflow/types.hpp"
#include "sfflow/geometry.hpp"
#include "sfflow/imaging.hpp"
#include "sfflow/flow.hpp"
#include "sfflow/shading_eqs.hpp"
#include "sfflow/solvers.hpp"
#include "sfflow/curve1d.hpp"
#include "sfflow/io.hpp"
