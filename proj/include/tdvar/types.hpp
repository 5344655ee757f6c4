#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tdvar {

using Complex = std::complex<double>;

/// Phase index. The ordering A < B < C indexes every 3-vector and 3x3 matrix.
enum class Phase : std::uint8_t { A = 0, B = 1, C = 2 };

inline constexpr std::array<Phase, 3> kAllPhases{Phase::A, Phase::B, Phase::C};

constexpr int index_of(Phase p) { return static_cast<int>(p); }
constexpr char phase_letter(Phase p) { return "ABC"[index_of(p)]; }
constexpr char phase_letter(int i) { return "ABC"[i]; }

/// Subset of {A, B, C}.
class PhaseSet {
 public:
  constexpr PhaseSet() = default;
  static constexpr PhaseSet all() { return PhaseSet(0b111); }
  static constexpr PhaseSet of(Phase p) { return PhaseSet(static_cast<std::uint8_t>(1u << index_of(p))); }
  /// Parses letters such as "ABC", "CB" or "a". Throws std::invalid_argument.
  static PhaseSet parse(std::string_view letters);

  constexpr bool has(Phase p) const { return (bits_ >> index_of(p)) & 1u; }
  constexpr bool has(int i) const { return (bits_ >> i) & 1u; }
  constexpr void insert(Phase p) { bits_ |= static_cast<std::uint8_t>(1u << index_of(p)); }
  constexpr int count() const { return (bits_ & 1) + ((bits_ >> 1) & 1) + ((bits_ >> 2) & 1); }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr bool subset_of(PhaseSet o) const { return (bits_ & ~o.bits_) == 0; }
  constexpr std::uint8_t bits() const { return bits_; }
  std::string to_string() const;

  friend constexpr bool operator==(PhaseSet, PhaseSet) = default;

 private:
  explicit constexpr PhaseSet(std::uint8_t bits) : bits_(bits) {}
  std::uint8_t bits_ = 0;
};

// Error taxonomy. The CLI maps these onto exit codes.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that breaks a structural invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A numerical solver did not produce an acceptable answer.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, int iterations, double last_mismatch)
      : Error(what), iterations_(iterations), last_mismatch_(last_mismatch) {}
  int iterations() const { return iterations_; }
  double last_mismatch() const { return last_mismatch_; }

 private:
  int iterations_;
  double last_mismatch_;
};

}  // namespace tdvar
