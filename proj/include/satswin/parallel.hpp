// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

#include "satswin/tensor.hpp"

SATSWIN_NAMESPACE_BEGIN

/// Worker cap: SATSWIN_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n). Each index must write only to its own outputs;
/// callers reduce shared quantities afterwards in index order, so results are
/// independent of the number of workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

SATSWIN_NAMESPACE_END
