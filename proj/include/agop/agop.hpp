#pragma once

// Umbrella header.

#include "agop/acceptance.hpp"
#include "agop/analysis.hpp"
#include "agop/checkpoint.hpp"
#include "agop/config.hpp"
#include "agop/corpus.hpp"
#include "agop/csv.hpp"
#include "agop/diff_model.hpp"
#include "agop/estimators.hpp"
#include "agop/hash.hpp"
#include "agop/lmshape.hpp"
#include "agop/lmtrain.hpp"
#include "agop/metrics.hpp"
#include "agop/models.hpp"
#include "agop/optim.hpp"
#include "agop/rng.hpp"
#include "agop/runner.hpp"
#include "agop/stats.hpp"
#include "agop/svg.hpp"
#include "agop/tensor.hpp"
#include "agop/toymodel.hpp"
#include "agop/transformer.hpp"
