#pragma once

#include "errors.hpp"
#include "model.hpp"
#include "grid.hpp"
#include "kernels.hpp"
#include "parallel.hpp"
#include "fredholm.hpp"
#include "simulate.hpp"
#include "synthesis.hpp"
#include "verify.hpp"
#include "config.hpp"
