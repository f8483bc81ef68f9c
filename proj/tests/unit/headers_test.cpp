// SPDX-License-Identifier: Apache-2.0
#include "prtg/io.hpp"

#include <gtest/gtest.h>

TEST(Headers, Compile) { SUCCEED(); }
