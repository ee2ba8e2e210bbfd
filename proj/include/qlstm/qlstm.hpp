// SPDX-License-Identifier: Apache-2.0
// Umbrella header.

#pragma once

#include "qlstm/autodiff.hpp"
#include "qlstm/dataset.hpp"
#include "qlstm/experiments.hpp"
#include "qlstm/features.hpp"
#include "qlstm/io.hpp"
#include "qlstm/models.hpp"
#include "qlstm/rng.hpp"
#include "qlstm/statevector.hpp"
#include "qlstm/training.hpp"
#include "qlstm/vqc.hpp"
