#pragma once

// Umbrella header for the SBM speech-enhancement core.

#include "sbm/backbone.hpp"
#include "sbm/bridge.hpp"
#include "sbm/checkpoint.hpp"
#include "sbm/common.hpp"
#include "sbm/config.hpp"
#include "sbm/data.hpp"
#include "sbm/loss.hpp"
#include "sbm/metrics.hpp"
#include "sbm/optim.hpp"
#include "sbm/random.hpp"
#include "sbm/signal.hpp"
#include "sbm/ssm.hpp"
#include "sbm/tensor.hpp"
#include "sbm/tensor_io.hpp"
#include "sbm/train.hpp"
#include "sbm/wav.hpp"
