// Sampled fields on a periodic grid: scalar, spacetime-vector, and time histories.
#ifndef KGMO_FIELD_HPP
#define KGMO_FIELD_HPP

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "kgmo/grid.hpp"

namespace kgmo {

using cplx = std::complex<double>;

// Scalar field, complex samples in row-major order. Real fields carry ~0 imaginary part.
class Field {
public:
    Field() = default;
    explicit Field(const Grid& g) : grid_(g), v_(g.size(), cplx{0.0, 0.0}) {}
    Field(const Grid& g, cplx fill) : grid_(g), v_(g.size(), fill) {}

    const Grid& grid() const { return grid_; }
    std::size_t size() const { return v_.size(); }
    cplx& operator[](std::size_t i) { return v_[i]; }
    const cplx& operator[](std::size_t i) const { return v_[i]; }
    std::vector<cplx>& data() { return v_; }
    const std::vector<cplx>& data() const { return v_; }

    bool finite() const {
        for (const auto& z : v_)
            if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
        return true;
    }
    void require_finite(const char* who) const {
        if (!finite()) throw InvalidFieldError(std::string(who) + ": non-finite samples");
    }

    Field& operator+=(const Field& o) {
        for (std::size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
        return *this;
    }
    Field& operator-=(const Field& o) {
        for (std::size_t i = 0; i < v_.size(); ++i) v_[i] -= o.v_[i];
        return *this;
    }
    Field& operator*=(cplx c) {
        for (auto& z : v_) z *= c;
        return *this;
    }

private:
    Grid grid_;
    std::vector<cplx> v_;
};

inline Field operator+(Field a, const Field& b) { a += b; return a; }
inline Field operator-(Field a, const Field& b) { a -= b; return a; }
inline Field operator*(cplx c, Field a) { a *= c; return a; }

inline Field pointwise(const Field& a, const Field& b, const std::function<cplx(cplx, cplx)>& f) {
    Field r(a.grid());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = f(a[i], b[i]);
    return r;
}
inline Field mul(const Field& a, const Field& b) {
    Field r(a.grid());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] * b[i];
    return r;
}
inline Field conj(const Field& a) {
    Field r(a.grid());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = std::conj(a[i]);
    return r;
}
inline Field real_part(const Field& a) {
    Field r(a.grid());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = cplx{a[i].real(), 0.0};
    return r;
}
inline Field imag_part(const Field& a) {
    Field r(a.grid());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = cplx{a[i].imag(), 0.0};
    return r;
}
inline Field abs2(const Field& a) {
    Field r(a.grid());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = cplx{std::norm(a[i]), 0.0};
    return r;
}
inline void axpy(Field& y, cplx c, const Field& x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += c * x[i];
}
inline double max_abs(const Field& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i]));
    return m;
}
inline double max_imag(const Field& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i].imag()));
    return m;
}
inline cplx mean(const Field& a) {
    cplx s{0.0, 0.0};
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return s / static_cast<double>(a.size());
}
inline cplx inner(const Field& a, const Field& b) { // <a,b> = sum conj(a) b * cell volume
    cplx s{0.0, 0.0};
    for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
    return s * a.grid().cell_volume();
}
inline Field sample(const Grid& g, const std::function<cplx(const std::array<double, 3>&)>& f) {
    Field r(g);
    for (std::size_t i = 0; i < g.size(); ++i) r[i] = f(g.position(i));
    return r;
}

// Spacetime vector field: component 0 is the time slot, 1..dim the spatial slots.
class VecField {
public:
    VecField() = default;
    explicit VecField(const Grid& g) : comp_(static_cast<std::size_t>(g.dim()) + 1, Field(g)) {}

    int components() const { return static_cast<int>(comp_.size()); }
    Field& operator[](int a) { return comp_[static_cast<std::size_t>(a)]; }
    const Field& operator[](int a) const { return comp_[static_cast<std::size_t>(a)]; }
    const Grid& grid() const { return comp_.front().grid(); }

    VecField& operator+=(const VecField& o) {
        for (std::size_t a = 0; a < comp_.size(); ++a) comp_[a] += o.comp_[a];
        return *this;
    }
    VecField& operator-=(const VecField& o) {
        for (std::size_t a = 0; a < comp_.size(); ++a) comp_[a] -= o.comp_[a];
        return *this;
    }
    VecField& operator*=(cplx c) {
        for (auto& f : comp_) f *= c;
        return *this;
    }
    bool finite() const {
        for (const auto& f : comp_)
            if (!f.finite()) return false;
        return true;
    }

private:
    std::vector<Field> comp_;
};

// Minkowski contraction a^alpha b_alpha = -a0 b0 + sum_i ai bi of two covariant vectors.
inline Field minkowski_dot(const VecField& a, const VecField& b) {
    Field r(a.grid());
    for (std::size_t i = 0; i < r.size(); ++i) {
        cplx s = -a[0][i] * b[0][i];
        for (int d = 1; d < a.components(); ++d) s += a[d][i] * b[d][i];
        r[i] = s;
    }
    return r;
}

// Three consecutive time slices (t-dt, t, t+dt) of a scalar field.
struct FieldHistory {
    Field prev, mid, next;
    const Grid& grid() const { return mid.grid(); }
    void require_same_grid() const {
        if (prev.grid() != mid.grid() || next.grid() != mid.grid())
            throw ConfigError("FieldHistory slices on mismatched grids");
    }
};

struct VecFieldHistory {
    VecField prev, mid, next;
    const Grid& grid() const { return mid.grid(); }
};

} // namespace kgmo

#endif
