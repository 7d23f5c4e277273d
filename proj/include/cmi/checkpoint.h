// Copyright 2026 The CMI Authors.
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

#ifndef CMI_CHECKPOINT_H_
#define CMI_CHECKPOINT_H_

#include <filesystem>
#include <iosfwd>

#include "cmi/model.h"

namespace cmi {

// Binary layout, little-endian:
//   "CMI1" | u32 |V| | u32 d | u32 m |
//   f32 item_embeddings[|V|*d] | f32 category_matrix[m*d] |
//   f32 W_z, U_z, b_z, W_r, U_r, b_r, W_h, U_h, b_h   (row-major)
void WriteCheckpoint(std::ostream& out, const ModelParameters& params);
// Throws ConfigError on bad magic, truncation, or trailing bytes.
ModelParameters ReadCheckpoint(std::istream& in);

// Writes to a sibling temp file and renames it into place.
void SaveCheckpoint(const std::filesystem::path& path,
                    const ModelParameters& params);
ModelParameters LoadCheckpoint(const std::filesystem::path& path);

}  // namespace cmi

#endif  // CMI_CHECKPOINT_H_
