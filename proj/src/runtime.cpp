// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsvlm/runtime.hpp"

#include <torch/torch.h>

#include <cstdlib>
#include <string>

namespace qsvlm {

int worker_threads() {
  const char* env = std::getenv("QSVLM_THREADS");
  if (env == nullptr) return 1;
  try {
    return std::max(1, std::stoi(env));
  } catch (const std::exception&) {
    return 1;
  }
}

void configure_threads() {
  torch::set_num_threads(worker_threads());
}

}  // namespace qsvlm
