#pragma once

// Differentiable Ensemble Kalman Filtering for soft-robot state estimation:
// learned transition/sensor/noise models with sampling-based uncertainty,
// spatio-temporal input embeddings, a synthetic soft-arm data generator,
// end-to-end training through the filter recursion, and downstream
// missing-observation and interaction-detection procedures.

#include "denkf/checkpoint.hpp"
#include "denkf/dataset_io.hpp"
#include "denkf/downstream.hpp"
#include "denkf/embedding.hpp"
#include "denkf/errors.hpp"
#include "denkf/filter.hpp"
#include "denkf/manifest.hpp"
#include "denkf/models.hpp"
#include "denkf/network.hpp"
#include "denkf/normalize.hpp"
#include "denkf/rng.hpp"
#include "denkf/simulator.hpp"
#include "denkf/train.hpp"
#include "denkf/types.hpp"
#include "denkf/version.hpp"
