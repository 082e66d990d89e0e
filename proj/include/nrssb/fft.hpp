#pragma once

#include <fftw3.h>

#include <complex>
#include <cstdint>
#include <map>
#include <mutex>

#include "nrssb/types.hpp"

namespace nrssb {
namespace detail {

// Process-wide FFTW plan cache. Plan creation is not thread-safe, execution
// via fftw_execute_dft is, so creation takes the lock and hot paths don't.
// Plans are in-place and FFTW_UNALIGNED so they run on any caller buffer.
class FftPlans {
  public:
    static FftPlans& instance() {
        static FftPlans p;
        return p;
    }

    fftw_plan get(int n, int sign) {
        std::lock_guard<std::mutex> lock(mu_);
        auto key = std::make_pair(n, sign);
        auto it = plans_.find(key);
        if (it != plans_.end())
            return it->second;
        cvec scratch(static_cast<size_t>(n));
        auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
        fftw_plan plan =
            fftw_plan_dft_1d(n, buf, buf, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
        plans_.emplace(key, plan);
        return plan;
    }

    FftPlans(const FftPlans&) = delete;
    FftPlans& operator=(const FftPlans&) = delete;

  private:
    FftPlans() = default;
    std::mutex mu_;
    std::map<std::pair<int, int>, fftw_plan> plans_;
};

}  // namespace detail

// In-place unscaled DFT; inverse is unscaled too (callers fold 1/N into
// whatever amplitude convention they need).
inline void fft_inplace(cpx* data, int n, bool inverse = false) {
    fftw_plan plan =
        detail::FftPlans::instance().get(n, inverse ? FFTW_BACKWARD : FFTW_FORWARD);
    auto* buf = reinterpret_cast<fftw_complex*>(data);
    fftw_execute_dft(plan, buf, buf);
}

inline cvec fft(cvec v, bool inverse = false) {
    fft_inplace(v.data(), static_cast<int>(v.size()), inverse);
    return v;
}

}  // namespace nrssb
