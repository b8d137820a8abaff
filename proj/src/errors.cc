/* Copyright 2026 The wmlstm Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "wmlstm/errors.h"

namespace wmlstm {

NumericOverflow::NumericOverflow(int step, std::string what_overflowed)
    : std::runtime_error(
          step >= 0 ? "numeric overflow at step " + std::to_string(step) +
                          " in " + what_overflowed
                    : "numeric overflow in " + what_overflowed),
      step_(step),
      quantity_(std::move(what_overflowed)) {}

}  // namespace wmlstm
