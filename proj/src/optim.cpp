#include "spd/optim.hpp"

namespace spd {

double lr_schedule(std::size_t epoch, double base_lr, std::size_t period) {
  if (period == 0) throw ConfigError("lr_schedule: period must be positive");
  // Powers of ten up to 1e22 are exact doubles, so a single division is
  // correctly rounded (1e-4 / 100 == 1e-6, unlike 1e-4 / 10 / 10).
  double divisor = 1.0;
  for (std::size_t k = epoch / period; k > 0; --k) divisor *= 10.0;
  return base_lr / divisor;
}

}  // namespace spd
