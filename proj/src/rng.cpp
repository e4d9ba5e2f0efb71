#include "sgdstop/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace sgdstop {

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream_index),
                    static_cast<std::uint32_t>(stream_index >> 32)};
  engine_.seed(seq);
}

std::string RandomStream::state() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_ << ' ' << uniform_ << ' ' << gamma_;
  return os.str();
}

RandomStream RandomStream::from_state(const std::string& state) {
  RandomStream s;
  std::istringstream is(state);
  is >> s.engine_ >> s.normal_ >> s.uniform_ >> s.gamma_;
  if (!is) throw std::invalid_argument("malformed random stream state");
  return s;
}

}  // namespace sgdstop
