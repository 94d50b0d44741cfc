// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fexpr/errors.hpp"
#include "fexpr/rng.hpp"
#include "fexpr/landmark_io.hpp"
#include "fexpr/pair_topology.hpp"
#include "fexpr/feature_engine.hpp"
#include "fexpr/preprocessing.hpp"
#include "fexpr/neural_net.hpp"
#include "fexpr/gradient_check.hpp"
#include "fexpr/training.hpp"
#include "fexpr/model_io.hpp"
#include "fexpr/experiment.hpp"
#include "fexpr/realtime.hpp"
#include "fexpr/bench.hpp"
#include "fexpr/synth.hpp"
