#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace pivem {

/// Runs fn(chunk, begin, end) over `chunks` contiguous slices of [0, n).
/// Slice boundaries depend only on n and chunks, so a caller that reduces
/// per-chunk results in chunk order gets results independent of scheduling.
template <typename Fn>
void for_each_chunk(std::size_t n, std::size_t chunks, Fn&& fn) {
  chunks = std::max<std::size_t>(1, std::min(chunks, n));
  auto bound = [&](std::size_t c) { return n * c / chunks; };
  if (chunks == 1) {
    fn(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(chunks - 1);
  for (std::size_t c = 1; c < chunks; ++c) pool.emplace_back([&, c] { fn(c, bound(c), bound(c + 1)); });
  fn(std::size_t{0}, bound(0), bound(1));
}

}  // namespace pivem
