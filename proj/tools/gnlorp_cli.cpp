// Copyright 2026 The gnlorp Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "gnlorp/cli.hpp"

int main(int argc, char** argv) { return gnlorp::dispatch(argc, argv, std::cout, std::cerr); }
