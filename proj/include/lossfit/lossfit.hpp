#pragma once

#include "lossfit/design.hpp"
#include "lossfit/errors.hpp"
#include "lossfit/io.hpp"
#include "lossfit/model.hpp"
#include "lossfit/parallel.hpp"
#include "lossfit/random.hpp"
#include "lossfit/simexp.hpp"
#include "lossfit/solver.hpp"
#include "lossfit/stats.hpp"
#include "lossfit/uncertainty.hpp"
