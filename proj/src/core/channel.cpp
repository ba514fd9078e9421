#include "core/channel.hpp"

#include <cmath>
#include <string>

#include "core/errors.hpp"
#include "core/numerics.hpp"

namespace semcomm {

double snr_db_to_sigma(double snr_db, double signal_power) {
  if (!(signal_power > 0.0)) throw Error(ErrorCode::InvalidParameter, "snr_db_to_sigma: signal power must be > 0");
  // +inf dB is the noiseless limit (sigma = 0).
  if (std::isnan(snr_db) || snr_db == -INFINITY)
    throw Error(ErrorCode::InvalidParameter, "snr_db_to_sigma: snr_db must be finite or +inf");
  return std::sqrt(signal_power / std::pow(10.0, snr_db / 10.0));
}

ChannelOutput transmit(std::span<const double> y_prime, const ChannelConfig& cfg) {
  ChannelOutput out;
  out.sigma_used = snr_db_to_sigma(cfg.snr_db);
  if (y_prime.empty()) return out;
  const double power = mean_square(y_prime);
  if (!(std::abs(power - 1.0) <= 1e-6)) {
    throw Error(ErrorCode::PreconditionViolation,
                "transmit: input mean square " + std::to_string(power) + " is not power-normalized");
  }
  RngStream rng(cfg.seed, cfg.stream);
  if (cfg.kind == ChannelKind::RayleighBlock) {
    // h^2 ~ Exp(1), so E[h^2] = 1.
    out.h_used = std::sqrt(-std::log(rng.derive(0x464144455ULL).uniform()));
  }
  RngStream noise = rng.derive(0x4E4F495345ULL);
  out.values.resize(y_prime.size());
  for (std::size_t i = 0; i < y_prime.size(); ++i) {
    out.values[i] = out.h_used * y_prime[i] + (out.sigma_used > 0.0 ? out.sigma_used * noise.gaussian() : 0.0);
  }
  return out;
}

std::vector<double> equalize(const ChannelOutput& out) {
  if (!(out.h_used > 0.0)) throw Error(ErrorCode::DegenerateChannel, "equalize: channel gain is zero");
  std::vector<double> v = out.values;
  if (out.h_used != 1.0)
    for (auto& x : v) x /= out.h_used;
  return v;
}

}  // namespace semcomm
