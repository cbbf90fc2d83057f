// Copyright 2026 The voxclass Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "voxclass/checkpoint.hpp"
#include "voxclass/dataset.hpp"
#include "voxclass/inference.hpp"
#include "voxclass/metrics.hpp"
#include "voxclass/network.hpp"
#include "voxclass/objectives.hpp"
#include "voxclass/optim.hpp"
#include "voxclass/resampler.hpp"
#include "voxclass/synthetic.hpp"
#include "voxclass/trainer.hpp"
#include "voxclass/volume_file.hpp"
