// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <torch/torch.h>

#include "qsvlm/log.hpp"

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  qsvlm::set_log_level(qsvlm::LogLevel::kWarn);
  doctest::Context context(argc, argv);
  return context.run();
}
