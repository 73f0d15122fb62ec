#include "dimlab/fft.hpp"

namespace dimlab {

std::vector<Index> prime_factors(Index n) {
  std::vector<Index> out;
  for (Index p = 2; p * p <= n; ++p) {
    while (n % p == 0) {
      out.push_back(p);
      n /= p;
    }
  }
  if (n > 1) out.push_back(n);
  return out;
}

bool is_fast_size(Index n) {
  if (n < 1) return false;
  for (Index p : {2, 3, 5, 7}) {
    while (n % p == 0) n /= p;
  }
  return n == 1;
}

Index next_fast_size(Index n, bool even) {
  Index m = std::max<Index>(n, 1);
  while (!is_fast_size(m) || (even && m % 2 != 0)) ++m;
  return m;
}

}  // namespace dimlab
