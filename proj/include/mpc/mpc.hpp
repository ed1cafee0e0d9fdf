#pragma once

#include <mpc/matrix.hpp>
#include <mpc/matcore.hpp>
#include <mpc/projections.hpp>
#include <mpc/compound.hpp>
#include <mpc/solver.hpp>
#include <mpc/problems.hpp>
