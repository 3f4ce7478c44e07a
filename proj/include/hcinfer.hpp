/* Copyright 2026 The hcinfer Authors. All Rights Reserved.

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

#pragma once

#include "hcinfer/bench.hpp"
#include "hcinfer/checkpoint.hpp"
#include "hcinfer/comm.hpp"
#include "hcinfer/config.hpp"
#include "hcinfer/cost.hpp"
#include "hcinfer/drce.hpp"
#include "hcinfer/engine.hpp"
#include "hcinfer/errors.hpp"
#include "hcinfer/mempool.hpp"
#include "hcinfer/model.hpp"
#include "hcinfer/model_json.hpp"
#include "hcinfer/ops.hpp"
#include "hcinfer/pipeline.hpp"
#include "hcinfer/tensor.hpp"
#include "hcinfer/tensor_parallel.hpp"
#include "hcinfer/wire.hpp"
#include "hcinfer/worker.hpp"
