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

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hcinfer {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class DeliveryError : public Error {
 public:
  DeliveryError(std::size_t worker_id, const std::string& what)
      : Error("worker " + std::to_string(worker_id) + ": " + what),
        worker_id_(worker_id) {}
  std::size_t worker_id() const { return worker_id_; }

 private:
  std::size_t worker_id_;
};

class CapacityError : public Error {
 public:
  CapacityError(std::size_t layer, const std::string& what)
      : Error("layer " + std::to_string(layer) + ": " + what), layer_(layer) {}
  std::size_t layer() const { return layer_; }

 private:
  std::size_t layer_;
};

// Raised from result_wait when any stage failed the batch.
class StageFailure : public Error {
 public:
  StageFailure(std::uint64_t key, std::size_t stage, const std::string& what)
      : Error("key " + std::to_string(key) + " failed at stage " +
              std::to_string(stage) + ": " + what),
        key_(key),
        stage_(stage) {}
  std::uint64_t key() const { return key_; }
  std::size_t stage() const { return stage_; }

 private:
  std::uint64_t key_;
  std::size_t stage_;
};

}  // namespace hcinfer
