#include "sqb/target.hpp"

#include "sqb/overlay.hpp"
#include "sqb/reader.hpp"

namespace sqb {

namespace fs = std::filesystem;

std::string_view target_kind_name(target_kind k) noexcept {
  switch (k) {
    case target_kind::host: return "host";
    case target_kind::bundle: return "bundle";
    case target_kind::overlay: return "overlay";
  }
  return "unknown";
}

target_kind detect_target(const fs::path& path) {
  std::error_code ec;
  auto st = fs::status(path, ec);
  if (ec || !fs::exists(st)) fail(errc::not_found, path.string() + ": no such file or directory");
  bool bundle = path.extension() == ".sqfs";
  bool overlay = fs::is_directory(st) ? fs::is_regular_file(path / kManifestName, ec)
                                      : path.filename() == kManifestName;
  if (bundle && overlay) {
    fail(errc::invalid_argument,
         path.string() + " is ambiguous: named like a bundle but holds a manifest");
  }
  if (bundle) {
    if (!fs::is_regular_file(st)) fail(errc::invalid_argument, path.string() + " is not a file");
    return target_kind::bundle;
  }
  if (overlay) return target_kind::overlay;
  if (fs::is_directory(st)) return target_kind::host;
  fail(errc::invalid_argument,
       path.string() + " is neither a .sqfs bundle nor a directory with " + kManifestName);
}

fs::path manifest_path(const fs::path& target) {
  return fs::is_directory(target) ? target / kManifestName : target;
}

std::shared_ptr<filesystem> open_target(const fs::path& path, const open_target_options& opts) {
  switch (detect_target(path)) {
    case target_kind::bundle:
      return bundle_reader::open(path, reader_options{opts.cache_budget});
    case target_kind::overlay: {
      overlay_options o;
      o.cache_budget = opts.cache_budget;
      o.verify_digests = opts.verify_digests;
      return overlay_reader::open_manifest(manifest_path(path), o);
    }
    case target_kind::host:
      break;
  }
  fail(errc::invalid_argument, path.string() + " is a plain directory, not a bundle or overlay");
}

} // namespace sqb
