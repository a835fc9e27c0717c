#pragma once

#include "cspn/chart.hpp"
#include "cspn/encoder.hpp"
#include "cspn/errors.hpp"
#include "cspn/eval.hpp"
#include "cspn/matrix.hpp"
#include "cspn/model.hpp"
#include "cspn/params.hpp"
#include "cspn/run_config.hpp"
#include "cspn/span_model.hpp"
#include "cspn/tape.hpp"
#include "cspn/training.hpp"
#include "cspn/treebank.hpp"
