#pragma once

// Dictionary learning with winner-take-all selection: single-layer training
// by alternating assignment/PCA or by online update rules, and deep residual
// stacks trained greedily layer by layer.

#include "oja/core.hpp"
#include "oja/selection.hpp"
#include "oja/shallow.hpp"
#include "oja/deep.hpp"
#include "oja/grad.hpp"
#include "oja/data_io.hpp"
#include "oja/metrics.hpp"
