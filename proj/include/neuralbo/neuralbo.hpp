#pragma once

#include "neuralbo/benchmarks.hpp"
#include "neuralbo/common.hpp"
#include "neuralbo/confidence.hpp"
#include "neuralbo/harness.hpp"
#include "neuralbo/ntk.hpp"
#include "neuralbo/optimizer.hpp"
#include "neuralbo/snapshot.hpp"
#include "neuralbo/surrogate.hpp"
