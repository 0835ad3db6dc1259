#include "wmtrig/audio/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>

#include "wmtrig/common/error.hpp"

namespace wmtrig::audio {
namespace {
// The FFTW planner is not re-entrant.
std::mutex g_planner_mutex;
}  // namespace

struct RealFft::Impl {
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;
};

RealFft::RealFft(int n) : n_(n), impl_(new Impl) {
  if (n < 2) throw ConfigError("fft size must be at least 2");
  std::lock_guard lock(g_planner_mutex);
  impl_->real = fftw_alloc_real(n);
  impl_->spec = fftw_alloc_complex(n / 2 + 1);
  impl_->fwd = fftw_plan_dft_r2c_1d(n, impl_->real, impl_->spec, FFTW_ESTIMATE);
  impl_->inv = fftw_plan_dft_c2r_1d(n, impl_->spec, impl_->real, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  std::lock_guard lock(g_planner_mutex);
  fftw_destroy_plan(impl_->fwd);
  fftw_destroy_plan(impl_->inv);
  fftw_free(impl_->real);
  fftw_free(impl_->spec);
  delete impl_;
}

const RealFft& RealFft::get(int n) {
  thread_local std::map<int, std::unique_ptr<RealFft>> cache;
  auto& slot = cache[n];
  if (!slot) slot.reset(new RealFft(n));
  return *slot;
}

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) const {
  std::copy(in.begin(), in.begin() + n_, impl_->real);
  fftw_execute(impl_->fwd);
  std::memcpy(static_cast<void*>(out.data()), impl_->spec, sizeof(fftw_complex) * bins());
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::span<double> out) const {
  // c2r overwrites its input buffer, so copy every call.
  std::memcpy(impl_->spec, in.data(), sizeof(fftw_complex) * bins());
  fftw_execute(impl_->inv);
  std::copy(impl_->real, impl_->real + n_, out.begin());
}

}  // namespace wmtrig::audio
