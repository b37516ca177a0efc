// Periodic uniform grid shared by all field containers.
#ifndef KGMO_GRID_HPP
#define KGMO_GRID_HPP

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace kgmo {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct InvalidFieldError : std::runtime_error {
    explicit InvalidFieldError(const std::string& msg) : std::runtime_error("invalid field: " + msg) {}
};

// Box [-L/2, L/2)^dim sampled with n points per axis, n a power of two.
// dx is identical across axes; dt obeys dt <= cfl*dx with cfl <= 0.5.
class Grid {
public:
    Grid() = default;
    Grid(int dim, int n, double length, double cfl, double dt = -1.0)
        : dim_(dim), n_(n), length_(length), cfl_(cfl) {
        if (dim < 1 || dim > 3) throw ConfigError("dim must be 1, 2 or 3");
        if (n < 4 || (n & (n - 1)) != 0) throw ConfigError("points per axis must be a power of two >= 4");
        if (length <= 0.0) throw ConfigError("box length must be positive");
        if (cfl <= 0.0 || cfl > 0.5) throw ConfigError("cfl must lie in (0, 0.5]");
        dt_ = (dt > 0.0) ? dt : cfl * dx();
        if (dt_ > cfl * dx() * (1.0 + 1e-12)) throw ConfigError("dt exceeds cfl * dx");
    }

    int dim() const { return dim_; }
    int n() const { return n_; }
    double length() const { return length_; }
    double dx() const { return length_ / n_; }
    double dt() const { return dt_; }
    double cfl() const { return cfl_; }
    std::size_t size() const {
        std::size_t s = 1;
        for (int d = 0; d < dim_; ++d) s *= static_cast<std::size_t>(n_);
        return s;
    }
    double cell_volume() const {
        double v = 1.0;
        for (int d = 0; d < dim_; ++d) v *= dx();
        return v;
    }
    double volume() const {
        double v = 1.0;
        for (int d = 0; d < dim_; ++d) v *= length_;
        return v;
    }

    // Coordinate of index i along one axis.
    double coord(int i) const { return -0.5 * length_ + i * dx(); }

    // Row-major decode: flat -> (i_1..i_dim).
    std::array<int, 3> decode(std::size_t flat) const {
        std::array<int, 3> idx{0, 0, 0};
        for (int d = dim_ - 1; d >= 0; --d) {
            idx[d] = static_cast<int>(flat % n_);
            flat /= n_;
        }
        return idx;
    }

    // Position vector of a flat index.
    std::array<double, 3> position(std::size_t flat) const {
        auto idx = decode(flat);
        std::array<double, 3> x{0.0, 0.0, 0.0};
        for (int d = 0; d < dim_; ++d) x[d] = coord(idx[d]);
        return x;
    }

    // Integer Fourier mode along one axis for index i (fftfreq order).
    int mode(int i) const { return (i <= n_ / 2 - 1) ? i : i - n_; }
    // Physical wavenumber of mode m.
    double wavenumber(int m) const { return 2.0 * 3.14159265358979323846 * m / length_; }

    bool operator==(const Grid& o) const {
        return dim_ == o.dim_ && n_ == o.n_ && length_ == o.length_ && dt_ == o.dt_;
    }
    bool operator!=(const Grid& o) const { return !(*this == o); }

private:
    int dim_ = 1;
    int n_ = 8;
    double length_ = 1.0;
    double cfl_ = 0.4;
    double dt_ = 0.05;
};

} // namespace kgmo

#endif
