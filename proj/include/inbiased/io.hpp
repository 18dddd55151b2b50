#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace inbiased::io {

namespace fs = std::filesystem;

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const fs::path& path);
std::string md5_file(const fs::path& path);

/// Incremental SHA-256 for hashing data that is produced piecewise.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t size);
  template <typename T>
  void update_value(const T& v) {
    update(&v, sizeof(T));
  }
  std::string hex();

 private:
  void* ctx_;
};

/// Exclusive advisory lock on `path` (created if absent), held for the
/// lifetime of the object.
class FileLock {
 public:
  explicit FileLock(const fs::path& path);
  ~FileLock();
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

/// Downloads `url` to `dest` unless `dest` already exists with the expected
/// md5. Concurrent callers for the same destination serialize on a lock
/// file. Throws ChecksumError on mismatch and DataError on transfer failure.
void fetch(const std::string& url, const fs::path& dest, const std::string& md5);

/// Unpacks a (gzip-compressed or plain) ustar archive below `dest`.
void extract_tar(const fs::path& archive, const fs::path& dest);

/// Whole file, transparently gunzipped when it carries a gzip header.
std::string read_maybe_gzip(const fs::path& path);

std::string read_file(const fs::path& path);
/// Writes through a temporary sibling and renames into place.
void write_file_atomic(const fs::path& path, std::string_view contents);

}  // namespace inbiased::io
