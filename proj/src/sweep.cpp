#include <cmath>

#include "kgmo/harness.hpp"

namespace kgmo {

FitResult fit_slope(const std::vector<double>& lambdas, const std::vector<double>& values) {
    if (lambdas.size() != values.size() || lambdas.size() < 3)
        throw ConfigError("slope fit needs at least 3 points");
    for (double v : values)
        if (!(v > 0.0)) throw ConfigError("slope fit requires positive values");
    const int n = static_cast<int>(lambdas.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
        double x = std::log(lambdas[static_cast<std::size_t>(i)]);
        double y = std::log(values[static_cast<std::size_t>(i)]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    FitResult f;
    double denom = n * sxx - sx * sx;
    f.slope = (n * sxy - sx * sy) / denom;
    f.intercept = (sy - f.slope * sx) / n;
    double ss_res = 0.0, ss_tot = 0.0, ymean = sy / n;
    for (int i = 0; i < n; ++i) {
        double x = std::log(lambdas[static_cast<std::size_t>(i)]);
        double y = std::log(values[static_cast<std::size_t>(i)]);
        double yhat = f.intercept + f.slope * x;
        ss_res += (y - yhat) * (y - yhat);
        ss_tot += (y - ymean) * (y - ymean);
    }
    f.r2 = (ss_tot > 0.0) ? 1.0 - ss_res / ss_tot : 1.0;
    return f;
}

} // namespace kgmo
