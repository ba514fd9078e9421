#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace semcomm {

enum class ChannelKind : std::uint8_t { Awgn, RayleighBlock };

struct ChannelConfig {
  ChannelKind kind = ChannelKind::Awgn;
  double snr_db = 20.0;
  bool h_known_at_rx = true;
  bool equalize = true;  // receiver divides by h before splitting
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;  // distinct per trial
};

struct ChannelOutput {
  std::vector<double> values;
  double h_used = 1.0;
  double sigma_used = 0.0;
};

// sqrt(signal_power / 10^(snr_db/10)); signal_power must be > 0.
double snr_db_to_sigma(double snr_db, double signal_power = 1.0);

// y'' = h * y' + n with n ~ N(0, sigma^2 I). `y_prime` must have unit mean
// square within 1e-6; an empty vector passes through untouched.
ChannelOutput transmit(std::span<const double> y_prime, const ChannelConfig& cfg);

// values / h_used.
std::vector<double> equalize(const ChannelOutput& out);

}  // namespace semcomm
