#pragma once

#include "choquard/grid.hpp"
#include "choquard/riesz.hpp"
#include "choquard/energy.hpp"
#include "choquard/fields.hpp"
#include "choquard/fiber.hpp"
#include "choquard/bubble.hpp"
#include "choquard/regularity.hpp"
#include "choquard/solver.hpp"
#include "choquard/cli.hpp"
