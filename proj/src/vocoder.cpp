#include "semwarm/vocoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace semwarm {

void StftConfig::validate() const {
    if (window_size < 2 || (window_size & (window_size - 1)) != 0) {
        throw std::invalid_argument("stft window size must be a power of two >= 2");
    }
    if (analysis_hop < 1 || analysis_hop > window_size) {
        throw std::invalid_argument("stft hop must be in (0, window_size]");
    }
}

void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
    const size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft size must be a power of two");

    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }

    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                std::complex<double> u = a[i + j];
                std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse) {
        for (auto& x : a) x /= static_cast<double>(n);
    }
}

static std::vector<double> hann_window(int n) {
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) {
        w[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n));
    }
    return w;
}

Spectrogram stft(const AudioClip& clip, const StftConfig& cfg) {
    cfg.validate();
    if (clip.samples.empty()) throw std::invalid_argument("stft of an empty clip");
    const int n = cfg.window_size;
    const int hop = cfg.analysis_hop;

    std::vector<float> padded = clip.samples;
    if (padded.size() < static_cast<size_t>(n)) {
        warn("clip shorter than one stft window; zero-padding");
        padded.resize(n, 0.0f);
    }
    size_t num_frames = 1 + (padded.size() - n + hop - 1) / hop;
    padded.resize((num_frames - 1) * hop + n, 0.0f);

    std::vector<double> window = hann_window(n);
    Spectrogram spec;
    spec.window_size = n;
    spec.hop = hop;
    spec.sample_rate = clip.sample_rate;
    spec.original_samples = clip.samples.size();
    spec.frames.resize(num_frames);

    for (size_t m = 0; m < num_frames; ++m) {
        auto& frame = spec.frames[m];
        frame.resize(n);
        size_t off = m * hop;
        for (int i = 0; i < n; ++i) {
            frame[i] = std::complex<double>(window[i] * padded[off + i], 0.0);
        }
        fft_inplace(frame, false);
    }
    return spec;
}

AudioClip istft(const Spectrogram& spec, size_t target_samples) {
    if (spec.frames.empty()) throw std::invalid_argument("istft of an empty spectrogram");
    const int n = spec.window_size;
    const int hop = spec.hop;
    const size_t natural = (spec.frames.size() - 1) * hop + n;

    std::vector<double> window = hann_window(n);
    std::vector<double> acc(natural, 0.0);
    std::vector<double> wsum(natural, 0.0);

    std::vector<std::complex<double>> buf(n);
    for (size_t m = 0; m < spec.frames.size(); ++m) {
        std::copy(spec.frames[m].begin(), spec.frames[m].end(), buf.begin());
        fft_inplace(buf, true);
        size_t off = m * hop;
        for (int i = 0; i < n; ++i) {
            acc[off + i] += window[i] * buf[i].real();
            wsum[off + i] += window[i] * window[i];
        }
    }

    size_t out_len = target_samples > 0 ? target_samples : natural;
    AudioClip out;
    out.sample_rate = spec.sample_rate;
    out.samples.resize(out_len, 0.0f);
    size_t copy = std::min(out_len, natural);
    for (size_t i = 0; i < copy; ++i) {
        out.samples[i] = wsum[i] > 1e-9 ? static_cast<float>(acc[i] / wsum[i]) : 0.0f;
    }
    return out;
}

static double wrap_phase(double p) {
    p = std::fmod(p + M_PI, 2.0 * M_PI);
    if (p < 0) p += 2.0 * M_PI;
    return p - M_PI;
}

AudioClip time_stretch(const AudioClip& clip, double target_duration_s, const StftConfig& cfg) {
    cfg.validate();
    if (clip.samples.empty()) throw std::invalid_argument("time_stretch of an empty clip");
    if (!(target_duration_s > 0.0)) throw std::invalid_argument("target duration must be positive");

    const double in_duration = clip.duration();
    const double r = target_duration_s / in_duration;
    if (r < 0.4 || r > 2.5) {
        throw std::invalid_argument("stretch ratio " + std::to_string(r) +
                                    " outside hard bounds [0.4, 2.5]");
    }

    const int n = cfg.window_size;
    const int half = n / 2;
    const int hop_a = cfg.analysis_hop;
    const int hop_s = std::max(1, static_cast<int>(std::llround(hop_a * r)));
    const size_t target_samples =
        static_cast<size_t>(std::llround(target_duration_s * clip.sample_rate));

    // frame count chosen so the natural synthesis length lands within one hop
    // of the target; the analysis tail beyond the input is zero padding
    long frames_l = 1;
    if (target_samples > static_cast<size_t>(n)) {
        frames_l = 1 + std::lround(static_cast<double>(target_samples - n) / hop_s);
    }
    const size_t num_frames = static_cast<size_t>(std::max(2L, frames_l));

    AudioClip padded = clip;
    size_t analysis_span = (num_frames - 1) * static_cast<size_t>(hop_a) + n;
    if (padded.samples.size() < analysis_span) padded.samples.resize(analysis_span, 0.0f);

    StftConfig acfg = cfg;
    Spectrogram spec = stft(padded, acfg);
    if (spec.frames.size() < num_frames) {
        throw std::runtime_error("internal: analysis produced too few frames");
    }
    spec.frames.resize(num_frames);

    // per-bin phase propagation: unwrap the analysis increment around the bin
    // center frequency, advance synthesis phase by the instantaneous frequency
    // times the synthesis hop
    std::vector<double> prev_phase(half + 1), synth_phase(half + 1);
    for (int k = 0; k <= half; ++k) {
        prev_phase[k] = std::arg(spec.frames[0][k]);
        synth_phase[k] = prev_phase[k];
    }

    Spectrogram out_spec;
    out_spec.window_size = n;
    out_spec.hop = hop_s;
    out_spec.sample_rate = clip.sample_rate;
    out_spec.original_samples = target_samples;
    out_spec.frames.resize(num_frames, std::vector<std::complex<double>>(n));

    for (size_t m = 0; m < num_frames; ++m) {
        auto& out_frame = out_spec.frames[m];
        for (int k = 0; k <= half; ++k) {
            double mag = std::abs(spec.frames[m][k]);
            double phase;
            if (m == 0) {
                phase = prev_phase[k];
            } else {
                double cur = std::arg(spec.frames[m][k]);
                double omega_k = 2.0 * M_PI * k / n;
                double expected = omega_k * hop_a;
                double deviation = wrap_phase(cur - prev_phase[k] - expected);
                double inst_freq = omega_k + deviation / hop_a;
                synth_phase[k] = wrap_phase(synth_phase[k] + inst_freq * hop_s);
                prev_phase[k] = cur;
                phase = synth_phase[k];
            }
            out_frame[k] = std::polar(mag, phase);
        }
        for (int k = half + 1; k < n; ++k) {
            out_frame[k] = std::conj(out_frame[n - k]);
        }
    }

    return istft(out_spec, target_samples);
}

// ---- WAV I/O ----

void write_wav(const std::string& path, const AudioClip& clip) {
    const uint32_t data_bytes = static_cast<uint32_t>(clip.samples.size() * 2);
    const uint32_t rate = static_cast<uint32_t>(clip.sample_rate);
    std::string out;
    out.reserve(44 + data_bytes);
    out.append("RIFF", 4);
    binio::write_u32(out, 36 + data_bytes);
    out.append("WAVE", 4);
    out.append("fmt ", 4);
    binio::write_u32(out, 16);
    binio::write_u32(out, 1 | (1u << 16));      // PCM, mono
    binio::write_u32(out, rate);
    binio::write_u32(out, rate * 2);            // byte rate
    binio::write_u32(out, 2 | (16u << 16));     // block align, bits per sample
    out.append("data", 4);
    binio::write_u32(out, data_bytes);
    for (float v : clip.samples) {
        float c = std::min(1.0f, std::max(-1.0f, v));
        int16_t s = static_cast<int16_t>(std::lround(c * 32767.0f));
        out.push_back(static_cast<char>(s & 0xff));
        out.push_back(static_cast<char>((s >> 8) & 0xff));
    }
    binio::write_file(path, out);
}

AudioClip read_wav(const std::string& path) {
    std::string bytes = binio::read_file(path);
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw std::runtime_error("not a wav file: " + path);
    }
    binio::Reader r{reinterpret_cast<const uint8_t*>(bytes.data()) + 12,
                    reinterpret_cast<const uint8_t*>(bytes.data()) + bytes.size()};
    AudioClip clip;
    uint16_t channels = 0, bits = 0;
    bool have_fmt = false;
    while (r.end - r.p >= 8) {
        char tag[4];
        std::memcpy(tag, r.p, 4);
        r.p += 4;
        uint32_t size = r.read_u32();
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            r.need(16);
            uint32_t fmt_chan = r.read_u32();
            uint16_t format = fmt_chan & 0xffff;
            channels = static_cast<uint16_t>(fmt_chan >> 16);
            clip.sample_rate = static_cast<int>(r.read_u32());
            r.read_u32();  // byte rate
            uint32_t align_bits = r.read_u32();
            bits = static_cast<uint16_t>(align_bits >> 16);
            if (format != 1) throw std::runtime_error("only PCM wav supported");
            r.p += size > 16 ? size - 16 : 0;
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw std::runtime_error("wav data chunk before fmt chunk");
            if (channels != 1 || bits != 16) {
                throw std::runtime_error("only 16-bit mono wav supported");
            }
            r.need(size);
            size_t count = size / 2;
            clip.samples.resize(count);
            for (size_t i = 0; i < count; ++i) {
                int16_t s = static_cast<int16_t>(static_cast<uint16_t>(r.p[2 * i]) |
                                                 (static_cast<uint16_t>(r.p[2 * i + 1]) << 8));
                clip.samples[i] = static_cast<float>(s) / 32768.0f;
            }
            return clip;
        } else {
            r.need(size);
            r.p += size;
        }
    }
    throw std::runtime_error("wav file has no data chunk: " + path);
}

}  // namespace semwarm
