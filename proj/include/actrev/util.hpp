#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace actrev {

// FNV-1a 64-bit; artifact fingerprints are rendered as 16 hex digits.
class Fingerprint {
 public:
  Fingerprint& bytes(const void* data, std::size_t n);
  Fingerprint& text(std::string_view s);
  Fingerprint& u64(std::uint64_t v);
  Fingerprint& i64(std::int64_t v) { return u64(static_cast<std::uint64_t>(v)); }
  Fingerprint& floats(std::span<const float> v);
  Fingerprint& ints(std::span<const int> v);

  std::uint64_t value() const { return h_; }
  std::string hex() const;

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ull;
};

std::string to_hex(std::uint64_t v);
std::string file_fingerprint(const std::string& path);

// Runs fn(i) for i in [0, n) over `jobs` threads. Work is split into
// contiguous index ranges; callers write results by index, so output is
// independent of the thread count.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

std::vector<std::string> split(std::string_view s, char delim);
std::string trim(std::string_view s);

}  // namespace actrev
