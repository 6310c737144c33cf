// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace qsvlm {

/// Worker cap from QSVLM_THREADS (default 1, so numeric results do not depend
/// on the machine).
int worker_threads();

/// Applies worker_threads() to torch's intra-op pool.
void configure_threads();

}  // namespace qsvlm
