#pragma once

#include <filesystem>
#include <memory>
#include <string_view>

#include "sqb/cache.hpp"
#include "sqb/vfs.hpp"

namespace sqb {

enum class target_kind : std::uint8_t { host, bundle, overlay };

std::string_view target_kind_name(target_kind k) noexcept;

/// A path ending in .sqfs is a bundle; a directory holding manifest.json
/// (or a manifest.json file) is an overlay; any other directory is a host
/// tree. A path matching both bundle and overlay rules is InvalidArgument.
target_kind detect_target(const std::filesystem::path& path);

struct open_target_options {
  std::uint64_t cache_budget = block_cache::kDefaultBudget;
  bool verify_digests = false;
};

/// Opens a bundle or overlay. Host trees are InvalidArgument.
std::shared_ptr<filesystem> open_target(const std::filesystem::path& path,
                                        const open_target_options& opts = {});

/// Manifest file for an overlay target path.
std::filesystem::path manifest_path(const std::filesystem::path& target);

} // namespace sqb
