/*
 * Copyright 2026 The qshape Authors.
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

#include "qshape/nn.hpp"

namespace qshape::detail {

Tensor conv_forward(Conv2D& layer, const Tensor& x, Mode mode);
Tensor conv_backward(Conv2D& layer, const Tensor& dy);

Tensor dense_forward(Dense& layer, const Tensor& x, Mode mode);
Tensor dense_backward(Dense& layer, const Tensor& dy);

Tensor batchnorm_forward(BatchNorm& layer, const Tensor& x, Mode mode);
Tensor batchnorm_backward(BatchNorm& layer, const Tensor& dy);

Tensor relu_forward(ReLU& layer, const Tensor& x);
Tensor relu_backward(ReLU& layer, const Tensor& dy);

}  // namespace qshape::detail
