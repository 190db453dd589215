// Shared vocabulary for the argrel library: error type, relation labels and
// the seeded random-number plumbing every stochastic component draws from.
#pragma once

#include <openssl/evp.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace argrel {

enum class ErrorCode {
  parse,
  conflict,
  undefined_input,
  precondition,
  state,
  shape,
  config,
  budget,
  integrity,
  incompatible,
  empty_training,
  degenerate_training,
  io,
  timeout,
};

inline std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::parse: return "parse";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::undefined_input: return "undefined_input";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::state: return "state";
    case ErrorCode::shape: return "shape";
    case ErrorCode::config: return "config";
    case ErrorCode::budget: return "budget";
    case ErrorCode::integrity: return "integrity";
    case ErrorCode::incompatible: return "incompatible";
    case ErrorCode::empty_training: return "empty_training";
    case ErrorCode::degenerate_training: return "degenerate_training";
    case ErrorCode::io: return "io";
    case ErrorCode::timeout: return "timeout";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool cond, ErrorCode code, const std::string& message) {
  if (!cond) fail(code, message);
}

// Relation classes in their fixed order; index = class id everywhere.
enum class Label : int { support = 0, attack = 1, no_rel = 2 };
inline constexpr int kNumLabels = 3;

inline std::string_view to_string(Label l) {
  switch (l) {
    case Label::support: return "support";
    case Label::attack: return "attack";
    case Label::no_rel: return "no_rel";
  }
  return "no_rel";
}

inline Label label_from_string(std::string_view s) {
  if (s == "support") return Label::support;
  if (s == "attack") return Label::attack;
  if (s == "no_rel" || s == "none" || s == "no-rel") return Label::no_rel;
  fail(ErrorCode::parse, "unknown relation label '" + std::string(s) + "'");
}

inline constexpr bool is_positive(Label l) { return l != Label::no_rel; }

// ---------------------------------------------------------------------------
// Randomness. All components take a 64-bit seed; named substreams are
// derived with splitmix64 over the seed and an FNV-1a hash of the name so
// that e.g. masking and dropout never share a stream.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : stream) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(seed ^ splitmix64(h));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                                 std::uint64_t index) {
  return splitmix64(derive_seed(seed, stream) + splitmix64(index + 1));
}

// Thin wrapper over mt19937_64 with distribution code written out so that
// draws are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n); rejection sampling removes modulo bias.
  std::size_t index(std::size_t n) {
    if (n == 0) fail(ErrorCode::precondition, "Rng::index on empty range");
    const std::uint64_t range = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % range);
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// SHA-256 hex digest (manifests, checkpoint integrity).

inline std::array<unsigned char, 32> sha256(std::span<const unsigned char> bytes) {
  std::array<unsigned char, 32> out{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, out.data(), &len);
  EVP_MD_CTX_free(ctx);
  return out;
}

inline std::string sha256_hex(std::string_view data) {
  const auto d = sha256({reinterpret_cast<const unsigned char*>(data.data()), data.size()});
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (unsigned char c : d) {
    s.push_back(kHex[c >> 4]);
    s.push_back(kHex[c & 15]);
  }
  return s;
}

}  // namespace argrel
