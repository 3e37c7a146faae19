#pragma once

#include <complex>
#include <vector>

#include "semwarm/core.hpp"

namespace semwarm {

struct StftConfig {
    int window_size = 1024;  // N, power of two
    int analysis_hop = 256;  // H_a; Hann with 75% overlap satisfies COLA

    void validate() const;
};

// In-place iterative radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a, bool inverse);

struct Spectrogram {
    int window_size = 0;
    int hop = 0;
    int sample_rate = 0;
    size_t original_samples = 0;
    // one full-size complex frame per analysis position
    std::vector<std::vector<std::complex<double>>> frames;
};

// Hann-windowed short-time transform. Clips shorter than one window are
// zero-padded with a warning.
Spectrogram stft(const AudioClip& clip, const StftConfig& cfg);

// Weighted overlap-add inverse; istft(stft(x)) reconstructs x on the interior.
// target_samples 0 keeps the natural (F-1)*hop + N length.
AudioClip istft(const Spectrogram& spec, size_t target_samples = 0);

// Phase-vocoder time-scale modification: stretches the clip to the requested
// duration while preserving pitch. The synthesis hop is round(H_a * r) and
// each bin's synthesis phase advances by its estimated instantaneous
// frequency; output is trimmed/padded by at most one hop to the exact
// round(target_duration * sample_rate) sample count.
// Admitted stretch ratios r = target/input are [0.4, 2.5] (hard bounds; the
// selector's duration gate keeps serving traffic within [2/3, 2]).
AudioClip time_stretch(const AudioClip& clip, double target_duration_s,
                       const StftConfig& cfg = StftConfig{});

// PCM 16-bit mono little-endian WAV with the canonical 44-byte header.
void write_wav(const std::string& path, const AudioClip& clip);
AudioClip read_wav(const std::string& path);

}  // namespace semwarm
