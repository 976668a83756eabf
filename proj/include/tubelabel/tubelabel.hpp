// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_TUBELABEL_HPP
#define TUBELABEL_TUBELABEL_HPP

#include "tubelabel/aggregate.hpp"
#include "tubelabel/config.hpp"
#include "tubelabel/dataset.hpp"
#include "tubelabel/error.hpp"
#include "tubelabel/flow_warp.hpp"
#include "tubelabel/losses.hpp"
#include "tubelabel/manifest.hpp"
#include "tubelabel/metrics.hpp"
#include "tubelabel/npy.hpp"
#include "tubelabel/parallel.hpp"
#include "tubelabel/pipeline.hpp"
#include "tubelabel/pseudo.hpp"
#include "tubelabel/refine.hpp"
#include "tubelabel/synth.hpp"
#include "tubelabel/tensor.hpp"
#include "tubelabel/validate.hpp"

#endif  // TUBELABEL_TUBELABEL_HPP
