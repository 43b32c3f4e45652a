#pragma once

#include "nett/error.hpp"
#include "nett/grid.hpp"
#include "nett/rng.hpp"
#include "nett/io.hpp"
#include "nett/operators.hpp"
#include "nett/fbp.hpp"
#include "nett/net.hpp"
#include "nett/train_set.hpp"
#include "nett/train.hpp"
#include "nett/phantoms.hpp"
#include "nett/regularizers.hpp"
#include "nett/rate_function.hpp"
#include "nett/solver.hpp"
#include "nett/analysis.hpp"
