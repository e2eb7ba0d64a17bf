#pragma once

#include "tokengt/numerics.hpp"
#include "tokengt/graphs.hpp"
#include "tokengt/equivariant.hpp"
#include "tokengt/identifiers.hpp"
#include "tokengt/tokenizer.hpp"
#include "tokengt/attention.hpp"
#include "tokengt/favor.hpp"
#include "tokengt/constructive.hpp"
#include "tokengt/experiments/dataset.hpp"
#include "tokengt/experiments/basis.hpp"
#include "tokengt/experiments/regression.hpp"
