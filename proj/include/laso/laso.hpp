#pragma once

// Umbrella header.

#include "laso/autodiff.hpp"
#include "laso/bank_io.hpp"
#include "laso/checkpoint.hpp"
#include "laso/compose.hpp"
#include "laso/errors.hpp"
#include "laso/fewshot.hpp"
#include "laso/gradcheck.hpp"
#include "laso/labels.hpp"
#include "laso/losses.hpp"
#include "laso/metrics.hpp"
#include "laso/nets.hpp"
#include "laso/optim.hpp"
#include "laso/rng.hpp"
#include "laso/synth.hpp"
#include "laso/tensor.hpp"
#include "laso/train.hpp"
