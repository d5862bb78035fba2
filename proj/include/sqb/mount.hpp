#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>
#include <thread>

#include "sqb/vfs.hpp"

namespace sqb {

struct mount_options {
  /// Name shown in the mount table.
  std::string fsname = "sqb";
  bool allow_other = false;
};

/// A live read-only mount. Dropping the handle unmounts.
class mount_handle {
 public:
  ~mount_handle();
  mount_handle(const mount_handle&) = delete;
  mount_handle& operator=(const mount_handle&) = delete;

  const std::filesystem::path& mountpoint() const noexcept { return mountpoint_; }

  /// Blocks until the mount goes away (external umount or unmount()).
  void wait();
  /// Idempotent; lazy detach so busy mounts still go.
  void unmount();

 private:
  friend std::unique_ptr<mount_handle> mount(const filesystem&, const std::filesystem::path&,
                                             bool, const mount_options&);
  mount_handle() = default;

  std::filesystem::path mountpoint_;
  int fd_ = -1;
  bool mounted_ = false;
  std::shared_ptr<std::atomic<bool>> stop_ = std::make_shared<std::atomic<bool>>(false);
  std::thread loop_;
};

/// Mounts `fs` at `mountpoint` through the kernel's userspace-filesystem
/// device. With `foreground` the request loop runs on the calling thread
/// and this returns once the mount is gone; otherwise it runs on a
/// background thread owned by the handle.
/// FacilityUnavailable when the device or the mount call is not available;
/// MountDenied when the mountpoint is missing, not a directory or not empty.
std::unique_ptr<mount_handle> mount(const filesystem& fs,
                                    const std::filesystem::path& mountpoint,
                                    bool foreground = false,
                                    const mount_options& opts = {});

/// Quick probe for the CLI and tests; `why` receives the reason on false.
bool mount_supported(std::string* why = nullptr);

} // namespace sqb
