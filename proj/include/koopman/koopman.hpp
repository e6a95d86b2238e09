#pragma once

#include "koopman/error.hpp"
#include "koopman/matfun.hpp"
#include "koopman/autodiff.hpp"
#include "koopman/mlp.hpp"
#include "koopman/optim.hpp"
#include "koopman/dynamics.hpp"
#include "koopman/series_io.hpp"
#include "koopman/model.hpp"
#include "koopman/training.hpp"
#include "koopman/checkpoint.hpp"
#include "koopman/assimilation.hpp"
#include "koopman/experiments.hpp"
