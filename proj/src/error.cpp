// Copyright 2026 The Histograde Authors. All Rights Reserved.
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

#include "histograde/error.hpp"

namespace histograde {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kBounds: return "bounds";
    case ErrorCode::kCorruption: return "corruption";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kParameter: return "parameter";
    case ErrorCode::kContract: return "contract";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kCapability: return "capability";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kChecksum: return "checksum";
    case ErrorCode::kDegenerateSplit: return "degenerate_split";
    case ErrorCode::kDegenerateBootstrap: return "degenerate_bootstrap";
    case ErrorCode::kUndefinedAuc: return "undefined_auc";
    case ErrorCode::kTrainingDiverged: return "training_diverged";
    case ErrorCode::kStageDependency: return "stage_dependency";
  }
  return "unknown";
}

}  // namespace histograde
