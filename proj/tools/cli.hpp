// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>

namespace ctdsr::cli {

enum ExitCode { kOk = 0, kValidation = 1, kAbort = 2 };

// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ctdsr::cli
