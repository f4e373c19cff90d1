// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hqf/blob_io.hpp"
#include "hqf/camera.hpp"
#include "hqf/decoder.hpp"
#include "hqf/errors.hpp"
#include "hqf/experiment.hpp"
#include "hqf/grid.hpp"
#include "hqf/io.hpp"
#include "hqf/metrics.hpp"
#include "hqf/numkernel.hpp"
#include "hqf/qmix.hpp"
#include "hqf/qswap.hpp"
#include "hqf/queries.hpp"
#include "hqf/rng.hpp"
#include "hqf/scene.hpp"
#include "hqf/tensor.hpp"
#include "hqf/weights_io.hpp"
