#include "inbiased/io.hpp"

#include "inbiased/error.hpp"

#include <curl/curl.h>
#include <fcntl.h>
#include <openssl/evp.h>
#include <sys/file.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace inbiased::io {
namespace {

std::string to_hex(const unsigned char* digest, unsigned int size) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(2 * size, '0');
  for (unsigned int i = 0; i < size; ++i) {
    out[2 * i] = kHex[digest[i] >> 4];
    out[2 * i + 1] = kHex[digest[i] & 15];
  }
  return out;
}

std::string digest_file(const fs::path& path, const EVP_MD* md) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), md, nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  return to_hex(digest, len);
}

std::size_t write_to_file(char* data, std::size_t size, std::size_t count, void* user) {
  return std::fwrite(data, size, count, static_cast<std::FILE*>(user)) * size;
}

struct CurlGlobal {
  CurlGlobal() { curl_global_init(CURL_GLOBAL_DEFAULT); }
  ~CurlGlobal() { curl_global_cleanup(); }
};

bool safe_relative(const fs::path& p) {
  if (p.is_absolute()) return false;
  for (const auto& part : p) {
    if (part == "..") return false;
  }
  return true;
}

std::uint64_t parse_octal(const char* field, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width && field[i] != '\0' && field[i] != ' '; ++i) {
    if (field[i] < '0' || field[i] > '7') throw DataError("corrupt tar header");
    v = v * 8 + static_cast<std::uint64_t>(field[i] - '0');
  }
  return v;
}

std::string cstr(const char* field, std::size_t width) {
  std::size_t n = 0;
  while (n < width && field[n] != '\0') ++n;
  return {field, n};
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_hex(std::string_view text) {
  Sha256 h;
  h.update(text.data(), text.size());
  return h.hex();
}

std::string sha256_file(const fs::path& path) { return digest_file(path, EVP_sha256()); }
std::string md5_file(const fs::path& path) { return digest_file(path, EVP_md5()); }

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr); }
Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256::update(const void* data, std::size_t size) { EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, size); }

std::string Sha256::hex() {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), digest, &len);
  return to_hex(digest, len);
}

FileLock::FileLock(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw DataError("cannot open lock file " + path.string());
  if (::flock(fd_, LOCK_EX) != 0) {
    ::close(fd_);
    throw DataError("cannot lock " + path.string());
  }
}

FileLock::~FileLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

void fetch(const std::string& url, const fs::path& dest, const std::string& md5) {
  FileLock lock(fs::path(dest.string() + ".lock"));
  if (fs::exists(dest) && (md5.empty() || md5_file(dest) == md5)) return;

  static CurlGlobal global;
  const fs::path part(dest.string() + ".part");
  std::FILE* out = std::fopen(part.c_str(), "wb");
  if (out == nullptr) throw DataError("cannot write " + part.string());
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), curl_easy_cleanup);
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, write_to_file);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, out);
  const CURLcode rc = curl_easy_perform(curl.get());
  std::fclose(out);
  if (rc != CURLE_OK) {
    fs::remove(part);
    throw DataError("download of " + url + " failed: " + curl_easy_strerror(rc));
  }
  if (!md5.empty()) {
    const std::string got = md5_file(part);
    if (got != md5) {
      fs::remove(part);
      throw ChecksumError("checksum mismatch for " + url + ": expected md5 " + md5 + ", got " + got);
    }
  }
  fs::rename(part, dest);
}

void extract_tar(const fs::path& archive, const fs::path& dest) {
  gzFile in = gzopen(archive.c_str(), "rb");
  if (in == nullptr) throw DataError("cannot open archive " + archive.string());
  std::unique_ptr<gzFile_s, decltype(&gzclose)> guard(in, gzclose);

  auto read_exact = [&](char* buf, std::size_t n) {
    const int got = gzread(in, buf, static_cast<unsigned>(n));
    if (got != static_cast<int>(n)) throw DataError("truncated archive " + archive.string());
  };

  std::array<char, 512> header{};
  std::string long_name;
  for (;;) {
    read_exact(header.data(), header.size());
    if (std::all_of(header.begin(), header.end(), [](char c) { return c == '\0'; })) break;
    const std::uint64_t size = parse_octal(header.data() + 124, 12);
    const char type = header[156];
    std::string name = cstr(header.data(), 100);
    const std::string prefix = cstr(header.data() + 345, 155);
    if (!prefix.empty()) name = prefix + "/" + name;
    if (!long_name.empty()) {
      name = long_name;
      long_name.clear();
    }

    const std::uint64_t padded = (size + 511) / 512 * 512;
    if (type == 'L') {
      std::string payload(padded, '\0');
      if (padded > 0) read_exact(payload.data(), padded);
      long_name = cstr(payload.data(), size);
      continue;
    }
    const fs::path rel(name);
    if (!safe_relative(rel)) throw DataError("unsafe path in archive: " + name);
    std::ofstream out;
    if (type == '5') {
      fs::create_directories(dest / rel);
    } else if (type == '0' || type == '\0') {
      fs::create_directories((dest / rel).parent_path());
      out.open(dest / rel, std::ios::binary | std::ios::trunc);
      if (!out) throw DataError("cannot write " + (dest / rel).string());
    }
    std::array<char, 1 << 16> chunk{};
    for (std::uint64_t done = 0; done < padded;) {
      const auto n = static_cast<std::size_t>(std::min<std::uint64_t>(chunk.size(), padded - done));
      read_exact(chunk.data(), n);
      if (out.is_open() && done < size) out.write(chunk.data(), static_cast<std::streamsize>(std::min<std::uint64_t>(n, size - done)));
      done += n;
    }
    if (out.is_open() && !out) throw DataError("cannot write " + (dest / rel).string());
  }
}

std::string read_maybe_gzip(const fs::path& path) {
  gzFile in = gzopen(path.c_str(), "rb");
  if (in == nullptr) throw DataError("cannot open " + path.string());
  std::unique_ptr<gzFile_s, decltype(&gzclose)> guard(in, gzclose);
  std::string out;
  std::array<char, 1 << 16> buf{};
  int got = 0;
  while ((got = gzread(in, buf.data(), buf.size())) > 0) out.append(buf.data(), static_cast<std::size_t>(got));
  if (got < 0) throw DataError("corrupt compressed file " + path.string());
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw DataError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace inbiased::io
