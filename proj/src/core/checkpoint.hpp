// Copyright 2026 The PoDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0

// Named-tensor checkpoint container.
//
// Layout (all integers little-endian):
//   "PDAR" | u32 version | u64 tensor count
//   per tensor: u32 name bytes | UTF-8 name | u8 dtype (0 = f32, 1 = f64)
//               | u32 rank | u64 dims[rank] | raw values
//   u64 footer bytes | JSON metadata footer
// Files are written to a temporary sibling and renamed into place.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tensor.hpp"

namespace podar::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

struct Checkpoint {
    std::vector<std::pair<std::string, TensorF>> f32;
    std::vector<std::pair<std::string, TensorD>> f64;
    nlohmann::json metadata = nlohmann::json::object();

    const TensorF& tensor(const std::string& name) const;
    bool has(const std::string& name) const;
    /// f32 tensors whose names start with `prefix`, with the prefix removed.
    std::vector<std::pair<std::string, TensorF>> with_prefix(const std::string& prefix) const;
    void add(const std::string& prefix, const std::vector<std::pair<std::string, TensorF>>& tensors);
};

void save(const std::filesystem::path& path, const Checkpoint& ck);
/// Throws std::runtime_error naming the file on any structural problem.
Checkpoint load(const std::filesystem::path& path);

/// Writes `text` to a temporary sibling and renames it into place.
void write_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace podar::ckpt
