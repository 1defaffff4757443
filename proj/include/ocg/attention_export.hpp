// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ocg/pipeline.hpp"

namespace ocg::io {

/// NumPy .npy v1.0, little-endian float32, C order.
void write_npy(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> read_npy(const std::filesystem::path& path);

/// Writes <id>_a_s.npy, <id>_f_u_l.npy and <id>_mhca.npy; returns the paths.
std::vector<std::filesystem::path> export_attention(const std::filesystem::path& dir,
                                                    const std::string& sample_id,
                                                    const pipeline::Prediction& p);

}  // namespace ocg::io
