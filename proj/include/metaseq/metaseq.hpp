// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "metaseq/cross_validation.hpp"
#include "metaseq/dataset.hpp"
#include "metaseq/embedding_io.hpp"
#include "metaseq/error.hpp"
#include "metaseq/linguistic_features.hpp"
#include "metaseq/metrics.hpp"
#include "metaseq/ops.hpp"
#include "metaseq/space_analysis.hpp"
#include "metaseq/synthetic.hpp"
#include "metaseq/tagger_model.hpp"
#include "metaseq/tensor.hpp"

namespace metaseq {
inline constexpr const char* kVersion = "0.1.0";
}
