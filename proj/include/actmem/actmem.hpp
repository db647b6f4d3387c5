/*
 * Copyright 2026 The actmem authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "actmem/allocator.hpp"
#include "actmem/bilevel.hpp"
#include "actmem/dsa.hpp"
#include "actmem/json_io.hpp"
#include "actmem/schedule.hpp"
#include "actmem/swap.hpp"
#include "actmem/synth.hpp"
#include "actmem/trace.hpp"
#include "actmem/types.hpp"

namespace actmem {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace actmem
