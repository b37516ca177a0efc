#include "kgmo/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>

namespace kgmo {
namespace fft {

namespace {

struct PlanPair {
    fftw_plan fwd = nullptr;
    fftw_plan bwd = nullptr;
};

// Planned once per (dim, n) with FFTW_ESTIMATE on a scratch buffer; executed through the
// new-array interface so distinct threads can transform distinct buffers.
PlanPair& plans_for(const Grid& g) {
    static std::map<std::pair<int, int>, PlanPair> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_pair(g.dim(), g.n());
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;

    int rank = g.dim();
    int dims[3] = {g.n(), g.n(), g.n()};
    std::vector<std::complex<double>> scratch(g.size());
    auto* ptr = reinterpret_cast<fftw_complex*>(scratch.data());
    PlanPair p;
    p.fwd = fftw_plan_dft(rank, dims, ptr, ptr, FFTW_FORWARD, FFTW_ESTIMATE);
    p.bwd = fftw_plan_dft(rank, dims, ptr, ptr, FFTW_BACKWARD, FFTW_ESTIMATE);
    auto res = cache.emplace(key, p);
    return res.first->second;
}

} // namespace

void forward(const Grid& g, std::vector<std::complex<double>>& data) {
    PlanPair& p = plans_for(g);
    auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(p.fwd, ptr, ptr);
    double scale = 1.0 / static_cast<double>(g.size());
    for (auto& z : data) z *= scale;
}

void inverse(const Grid& g, std::vector<std::complex<double>>& data) {
    PlanPair& p = plans_for(g);
    auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(p.bwd, ptr, ptr);
}

} // namespace fft
} // namespace kgmo
