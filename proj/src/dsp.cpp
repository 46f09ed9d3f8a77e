#include "wavegen/dsp.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <mutex>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace wavegen {

namespace {

std::mutex g_fftw_mutex;  // FFTW planning is not thread-safe

// One-shot real FFT helper for a fixed transform size.
class RealFft {
 public:
  explicit RealFft(long n) : n_(n) {
    std::lock_guard<std::mutex> lock(g_fftw_mutex);
    in_ = (double*)fftw_malloc(sizeof(double) * (size_t)n);
    out_ = (fftw_complex*)fftw_malloc(sizeof(fftw_complex) * (size_t)(n / 2 + 1));
    fwd_ = fftw_plan_dft_r2c_1d((int)n, in_, out_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d((int)n, out_, in_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard<std::mutex> lock(g_fftw_mutex);
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  long bins() const { return n_ / 2 + 1; }

  void forward(const double* x, std::complex<double>* spec) {
    std::copy_n(x, n_, in_);
    fftw_execute(fwd_);
    for (long b = 0; b < bins(); ++b) spec[b] = {out_[b][0], out_[b][1]};
  }

  // Unnormalized FFTW c2r; caller divides by n.
  void inverse(const std::complex<double>* spec, double* x) {
    for (long b = 0; b < bins(); ++b) {
      out_[b][0] = spec[b].real();
      out_[b][1] = spec[b].imag();
    }
    fftw_execute(inv_);
    std::copy_n(in_, n_, x);
  }

 private:
  long n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan fwd_, inv_;
};

std::vector<double> hann_window(long n) {
  std::vector<double> w((size_t)n);
  for (long t = 0; t < n; ++t) w[(size_t)t] = 0.5 * (1.0 - std::cos(2.0 * M_PI * t / (double)n));
  return w;
}

long frame_count(long length, long hop) { return (length + hop - 1) / hop; }

ComplexSpectrogram stft_signal(const std::vector<double>& x, long win_len, long hop,
                               int sample_rate) {
  long frames = frame_count((long)x.size(), hop);
  ComplexSpectrogram s;
  s.frames = frames;
  s.bins = win_len / 2 + 1;
  s.win_len = win_len;
  s.hop = hop;
  s.sample_rate = sample_rate;
  s.values.resize((size_t)(frames * s.bins));
  auto window = hann_window(win_len);
  RealFft fft(win_len);
  std::vector<double> frame((size_t)win_len);
  for (long f = 0; f < frames; ++f) {
    long base = f * hop;
    for (long t = 0; t < win_len; ++t) {
      long src = base + t;
      frame[(size_t)t] = (src < (long)x.size() ? x[(size_t)src] : 0.0) * window[(size_t)t];
    }
    fft.forward(frame.data(), s.values.data() + f * s.bins);
  }
  return s;
}

// Least-squares inverse STFT over a fixed output length: windowed overlap-add
// normalized by the summed squared window.
std::vector<double> istft_signal(const ComplexSpectrogram& s, long out_len) {
  std::vector<double> num((size_t)out_len, 0.0), den((size_t)out_len, 0.0);
  auto window = hann_window(s.win_len);
  RealFft fft(s.win_len);
  std::vector<double> frame((size_t)s.win_len);
  std::vector<std::complex<double>> spec((size_t)s.bins);
  for (long f = 0; f < s.frames; ++f) {
    std::copy_n(s.values.data() + f * s.bins, s.bins, spec.data());
    spec[0] = {spec[0].real(), 0.0};
    spec[(size_t)(s.bins - 1)] = {spec[(size_t)(s.bins - 1)].real(), 0.0};
    fft.inverse(spec.data(), frame.data());
    long base = f * s.hop;
    for (long t = 0; t < s.win_len; ++t) {
      long dst = base + t;
      if (dst >= out_len) break;
      double w = window[(size_t)t];
      num[(size_t)dst] += w * frame[(size_t)t] / (double)s.win_len;
      den[(size_t)dst] += w * w;
    }
  }
  for (long t = 0; t < out_len; ++t) num[(size_t)t] /= std::max(den[(size_t)t], 1e-12);
  return num;
}

}  // namespace

ComplexSpectrogram stft(const Waveform& w, long win_len, long hop) {
  if (hop < 1 || win_len < hop) throw std::invalid_argument("stft: require win_len >= hop >= 1");
  std::vector<double> x(w.samples.begin(), w.samples.end());
  return stft_signal(x, win_len, hop, w.sample_rate);
}

Grid magnitude(const ComplexSpectrogram& s) {
  Grid g(s.frames, s.bins);
  for (size_t i = 0; i < s.values.size(); ++i) g.values[i] = std::abs(s.values[i]);
  return g;
}

BinStats fit_bin_stats(const Dataset& d, long win_len, long hop) {
  if (d.examples.empty()) throw std::invalid_argument("fit_bin_stats: empty dataset");
  long bins = win_len / 2 + 1;
  std::vector<double> sum((size_t)bins, 0.0), sumsq((size_t)bins, 0.0);
  long frames_total = 0;
  for (const auto& w : d.examples) {
    auto s = stft(w, win_len, hop);
    for (long f = 0; f < s.frames; ++f)
      for (long b = 0; b < bins; ++b) {
        double lm = std::log(std::abs(s.at(f, b)) + kLogEps);
        sum[(size_t)b] += lm;
        sumsq[(size_t)b] += lm * lm;
      }
    frames_total += s.frames;
  }
  BinStats st;
  st.win_len = win_len;
  st.hop = hop;
  st.sample_rate = d.sample_rate;
  st.eps = kLogEps;
  long kept = bins - 1;
  st.mean.resize((size_t)kept);
  st.std.resize((size_t)kept);
  for (long b = 0; b < kept; ++b) {
    double m = sum[(size_t)b] / (double)frames_total;
    double var = sumsq[(size_t)b] / (double)frames_total - m * m;
    st.mean[(size_t)b] = m;
    st.std[(size_t)b] = std::sqrt(std::max(var, 0.0));
  }
  st.nyquist_mean = sum[(size_t)(bins - 1)] / (double)frames_total;
  return st;
}

NormalizedSpectrogram spec_preprocess(const Waveform& w, const BinStats& s) {
  if (w.sample_rate != s.sample_rate)
    throw std::invalid_argument("spec_preprocess: sample rate mismatch");
  auto spec = stft(w, s.win_len, s.hop);
  if (spec.bins - 1 != s.bins())
    throw std::invalid_argument("spec_preprocess: stats bin count mismatch");
  NormalizedSpectrogram out;
  out.frames = spec.frames;
  out.bins = s.bins();
  out.grid.resize((size_t)(out.frames * out.bins));
  for (long f = 0; f < out.frames; ++f)
    for (long b = 0; b < out.bins; ++b) {
      double lm = std::log(std::abs(spec.at(f, b)) + s.eps);
      double z = (lm - s.mean[(size_t)b]) / std::max(s.std[(size_t)b], kStdEps);
      z = std::clamp(z, -3.0, 3.0) / 3.0;
      out.grid[(size_t)(f * out.bins + b)] = (float)z;
    }
  return out;
}

Waveform griffin_lim(const Grid& mag, int iters, uint64_t seed, long win_len, long hop,
                     long out_len, int sample_rate, std::vector<double>* objective_trace) {
  if (mag.bins != win_len / 2 + 1)
    throw std::invalid_argument("griffin_lim: magnitude bins must equal win_len/2+1");
  for (double v : mag.values)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument("griffin_lim: magnitudes must be finite and nonnegative");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase_dist(-M_PI, M_PI);
  // One random phase per frequency bin, shared across frames: avoids the
  // symmetric all-zero fixed point while starting far closer to the
  // consistent-spectrogram manifold than independent per-cell phases.
  std::vector<double> bin_phase((size_t)mag.bins);
  for (auto& p : bin_phase) p = phase_dist(rng);
  ComplexSpectrogram s;
  s.frames = mag.frames;
  s.bins = mag.bins;
  s.win_len = win_len;
  s.hop = hop;
  s.sample_rate = sample_rate;
  s.values.resize(mag.values.size());
  for (long f = 0; f < mag.frames; ++f)
    for (long b = 0; b < mag.bins; ++b)
      s.values[(size_t)(f * mag.bins + b)] = std::polar(mag.at(f, b), bin_phase[(size_t)b]);
  std::vector<double> x = istft_signal(s, out_len);
  for (int it = 0; it < iters; ++it) {
    auto spec = stft_signal(x, win_len, hop, sample_rate);
    if (objective_trace) {
      double e = 0;
      for (size_t i = 0; i < spec.values.size(); ++i) {
        double diff = std::abs(spec.values[i]) - mag.values[i];
        e += diff * diff;
      }
      objective_trace->push_back(e);
    }
    for (size_t i = 0; i < spec.values.size(); ++i) {
      double a = std::abs(spec.values[i]);
      spec.values[i] = (a > 0) ? spec.values[i] * (mag.values[i] / a)
                               : std::complex<double>(mag.values[i], 0.0);
    }
    x = istft_signal(spec, out_len);
  }
  if (objective_trace) {
    auto spec = stft_signal(x, win_len, hop, sample_rate);
    double e = 0;
    for (size_t i = 0; i < spec.values.size(); ++i) {
      double diff = std::abs(spec.values[i]) - mag.values[i];
      e += diff * diff;
    }
    objective_trace->push_back(e);
  }
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize((size_t)out_len);
  for (long t = 0; t < out_len; ++t) w.samples[(size_t)t] = (float)x[(size_t)t];
  return w;
}

Waveform spec_invert(const NormalizedSpectrogram& n, const BinStats& s, int iters,
                     uint64_t seed) {
  if (n.bins != s.bins()) throw std::invalid_argument("spec_invert: stats bin count mismatch");
  Grid mag(n.frames, n.bins + 1);
  for (long f = 0; f < n.frames; ++f) {
    for (long b = 0; b < n.bins; ++b) {
      double z = (double)n.at(f, b) * 3.0;
      double lm = z * std::max(s.std[(size_t)b], kStdEps) + s.mean[(size_t)b];
      mag.at(f, b) = std::max(std::exp(lm) - s.eps, 0.0);
    }
    mag.at(f, n.bins) = std::exp(s.nyquist_mean);  // Nyquist restored from dataset mean
  }
  long out_len = n.frames * s.hop;
  return griffin_lim(mag, iters, seed, s.win_len, s.hop, out_len, s.sample_rate);
}

std::vector<std::vector<double>> mel_filterbank(long n_mels, long n_bins, double f_lo,
                                                double f_hi, int sample_rate, long win_len) {
  double nyquist = sample_rate / 2.0;
  if (!(f_lo < f_hi) || f_hi > nyquist)
    throw std::invalid_argument("mel_filterbank: require f_lo < f_hi <= Nyquist");
  if (n_mels > n_bins) throw std::invalid_argument("mel_filterbank: more mel bins than linear bins");
  auto mel_of = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto freq_of = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  double m_lo = mel_of(f_lo), m_hi = mel_of(f_hi);
  double spacing = (n_mels > 1) ? (m_hi - m_lo) / (double)(n_mels - 1) : (m_hi - m_lo);
  std::vector<std::vector<double>> rows((size_t)n_mels, std::vector<double>((size_t)n_bins, 0.0));
  double bin_hz = (double)sample_rate / (double)win_len;
  for (long i = 0; i < n_mels; ++i) {
    double center = m_lo + spacing * (double)i;
    double left = center - spacing, right = center + spacing;
    double fc = freq_of(center), fl = freq_of(left), fr = freq_of(right);
    for (long b = 0; b < n_bins; ++b) {
      double f = b * bin_hz;
      double w = 0;
      if (f > fl && f < fc)
        w = (f - fl) / (fc - fl);
      else if (f == fc)
        w = 1.0;
      else if (f > fc && f < fr)
        w = (fr - f) / (fr - fc);
      rows[(size_t)i][(size_t)b] = w;
    }
  }
  return rows;
}

Grid mel_project(const Grid& mag, long n_mels, double f_lo, double f_hi, int sample_rate,
                 long win_len, const MelStats* stats) {
  auto fb = mel_filterbank(n_mels, mag.bins, f_lo, f_hi, sample_rate, win_len);
  Grid out(mag.frames, n_mels);
  for (long f = 0; f < mag.frames; ++f)
    for (long m = 0; m < n_mels; ++m) {
      double acc = 0;
      for (long b = 0; b < mag.bins; ++b) acc += fb[(size_t)m][(size_t)b] * mag.at(f, b);
      out.at(f, m) = std::log(acc + kLogEps);
    }
  for (long m = 0; m < n_mels; ++m) {
    double mean, sd;
    if (stats) {
      mean = stats->mean[(size_t)m];
      sd = stats->std[(size_t)m];
    } else {
      double s = 0, s2 = 0;
      for (long f = 0; f < out.frames; ++f) {
        s += out.at(f, m);
        s2 += out.at(f, m) * out.at(f, m);
      }
      mean = s / out.frames;
      sd = std::sqrt(std::max(s2 / out.frames - mean * mean, 0.0));
    }
    for (long f = 0; f < out.frames; ++f)
      out.at(f, m) = (out.at(f, m) - mean) / std::max(sd, kStdEps);
  }
  return out;
}

PcaResult pca_slices(const Dataset& d, long slice_len, long k, uint64_t seed, long n_slices) {
  if (k > slice_len) throw std::invalid_argument("pca_slices: k must not exceed slice_len");
  if (d.examples.empty() || d.length < slice_len)
    throw std::invalid_argument("pca_slices: dataset cannot yield slices of requested length");
  if (n_slices < k) throw std::invalid_argument("pca_slices: need at least k slices");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<long> ex_dist(0, (long)d.examples.size() - 1);
  std::uniform_int_distribution<long> off_dist(0, d.length - slice_len);

  Eigen::MatrixXd X(n_slices, slice_len);
  for (long i = 0; i < n_slices; ++i) {
    const auto& w = d.examples[(size_t)ex_dist(rng)];
    long off = off_dist(rng);
    for (long t = 0; t < slice_len; ++t) X(i, t) = (double)w.samples[(size_t)(off + t)];
  }
  Eigen::RowVectorXd mean = X.colwise().mean();
  X.rowwise() -= mean;
  Eigen::MatrixXd cov = (X.transpose() * X) / (double)n_slices;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw std::runtime_error("pca_slices: eigendecomposition failed");

  PcaResult res;
  res.components.resize((size_t)k);
  res.eigenvalues.resize((size_t)k);
  for (long i = 0; i < k; ++i) {
    long src = slice_len - 1 - i;  // eigenvalues ascend in Eigen
    Eigen::VectorXd v = es.eigenvectors().col(src);
    long arg = 0;
    for (long t = 1; t < slice_len; ++t)
      if (std::abs(v(t)) > std::abs(v(arg))) arg = t;
    if (v(arg) < 0) v = -v;
    res.eigenvalues[(size_t)i] = es.eigenvalues()(src);
    res.components[(size_t)i].assign(v.data(), v.data() + slice_len);
  }
  return res;
}

std::vector<double> fft_magnitude(const std::vector<double>& x) {
  if (x.empty()) throw std::invalid_argument("fft_magnitude: empty input");
  long n = (long)x.size();
  RealFft fft(n);
  std::vector<std::complex<double>> spec((size_t)(n / 2 + 1));
  fft.forward(x.data(), spec.data());
  std::vector<double> mag(spec.size());
  for (size_t i = 0; i < spec.size(); ++i) mag[i] = std::abs(spec[i]);
  return mag;
}

std::string bin_stats_to_json(const BinStats& s) {
  nlohmann::ordered_json j;
  j["win_len"] = s.win_len;
  j["hop"] = s.hop;
  j["sample_rate"] = s.sample_rate;
  j["eps"] = s.eps;
  j["mean"] = s.mean;
  j["std"] = s.std;
  j["nyquist_mean"] = s.nyquist_mean;
  return j.dump();
}

BinStats bin_stats_from_json(const std::string& json_text) {
  auto j = nlohmann::json::parse(json_text);
  BinStats s;
  s.win_len = j.at("win_len").get<long>();
  s.hop = j.at("hop").get<long>();
  s.sample_rate = j.at("sample_rate").get<int>();
  s.eps = j.at("eps").get<double>();
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  s.nyquist_mean = j.at("nyquist_mean").get<double>();
  return s;
}

}  // namespace wavegen
