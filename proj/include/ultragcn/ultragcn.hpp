#pragma once

#include "ultragcn/dataset.hpp"
#include "ultragcn/errors.hpp"
#include "ultragcn/evaluation.hpp"
#include "ultragcn/graph.hpp"
#include "ultragcn/model.hpp"
#include "ultragcn/mp_oracle.hpp"
#include "ultragcn/training.hpp"
