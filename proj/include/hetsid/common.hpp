#pragma once

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace hetsid {

// Shortest round-trip decimal formatting. Locale-independent and
// deterministic, so file outputs are byte-identical across runs.
inline std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, res.ptr);
}

// SplitMix64 finalizer; used to derive independent per-task seeds from a
// master seed without any sequential RNG state.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Thrown for problems a user can fix in the invocation (bad flag values,
// malformed config/manifest files). The CLI maps it to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace hetsid
