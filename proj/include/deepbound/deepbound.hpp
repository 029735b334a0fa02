// Copyright 2026 The deepbound Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deepbound/attack.hpp"
#include "deepbound/autodiff.hpp"
#include "deepbound/bounds.hpp"
#include "deepbound/classify.hpp"
#include "deepbound/csv.hpp"
#include "deepbound/dataset.hpp"
#include "deepbound/detect.hpp"
#include "deepbound/distribution.hpp"
#include "deepbound/error.hpp"
#include "deepbound/graph.hpp"
#include "deepbound/image.hpp"
#include "deepbound/losses.hpp"
#include "deepbound/metrics.hpp"
#include "deepbound/model.hpp"
#include "deepbound/parallel.hpp"
#include "deepbound/planes.hpp"
#include "deepbound/rng.hpp"
#include "deepbound/serialization.hpp"
#include "deepbound/tensor.hpp"
#include "deepbound/train.hpp"
