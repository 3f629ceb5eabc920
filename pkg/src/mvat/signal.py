"""Audio I/O, synthetic noisy-speech generation, spectra, and metrics.

Everything here is seed-deterministic: per-sample RNG streams are derived
from (global_seed, split, sample_index), so corpora can be generated in
any order, or in parallel, and come out bit-identical.
"""
from __future__ import annotations

import json
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import AudioError, SignalError

SAMPLE_RATE = 16000

NOISE_KINDS = ("white", "pink", "filtered-babble")


@dataclass
class AudioClip:
    """Mono waveform with samples nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError(f"clip must be mono 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("clip contains non-finite samples")
        if self.sample_rate <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class StftConfig:
    fft_size: int
    hop: int
    window_len: int

    def __post_init__(self):
        if not (0 < self.hop <= self.window_len <= self.fft_size):
            raise SignalError(
                f"need 0 < hop <= window_len <= fft_size, got "
                f"hop={self.hop}, window_len={self.window_len}, fft_size={self.fft_size}"
            )


# The triple of resolutions standard for time-domain enhancement losses.
DEFAULT_RESOLUTIONS = (
    StftConfig(512, 50, 240),
    StftConfig(1024, 120, 600),
    StftConfig(2048, 240, 1200),
)


@dataclass(frozen=True)
class MixSpec:
    """Recipe for one synthetic noisy/clean pair."""

    snr_db: float
    clean_seed: int
    noise_seed: int
    noise_kind: str = "white"
    duration_s: float = 1.0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise SignalError(f"duration_s must be positive, got {self.duration_s}")
        if self.noise_kind not in NOISE_KINDS:
            raise SignalError(f"unknown noise kind {self.noise_kind!r}, expected one of {NOISE_KINDS}")


# -- WAV I/O ---------------------------------------------------------------

def save_wav(clip: AudioClip, path) -> None:
    """Write a mono 16-bit PCM RIFF/WAVE file. Samples are clipped to [-1, 1]."""
    q = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(q.tobytes())


def load_wav(path) -> AudioClip:
    """Read a mono 16-bit PCM, 16 kHz RIFF/WAVE file.

    Other encodings, channel counts, and rates are rejected: there is no
    resampler or transcoder in this package.
    """
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            if wf.getcomptype() != "NONE":
                raise AudioError(f"unsupported encoding {wf.getcomptype()!r}, need plain PCM")
            if width != 2:
                raise AudioError(f"unsupported encoding: {8 * width}-bit PCM, need 16-bit")
            if channels != 1:
                raise AudioError(f"need mono audio, got {channels} channels")
            if rate != SAMPLE_RATE:
                raise AudioError(f"need {SAMPLE_RATE} Hz audio, got {rate} Hz")
            raw = wf.readframes(wf.getnframes())
    except wave.Error as e:
        raise AudioError(f"malformed WAV file {path}: {e}") from e
    except EOFError as e:
        raise AudioError(f"truncated WAV file {path}") from e
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate)


# -- synthetic speech and noise ---------------------------------------------

def harmonic_tone(n: int, sample_rate: int, fundamental: float, amplitudes,
                  phases=None, vibrato_hz: float = 0.0, vibrato_depth: float = 0.0,
                  tremolo_hz: float = 0.0, tremolo_depth: float = 0.0) -> np.ndarray:
    """Sum of harmonics of a fundamental, optionally frequency/amplitude modulated.

    With a single harmonic and zero modulation depths this is a pure sine
    at `fundamental`.
    """
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    tt = np.arange(n) / sample_rate
    inst = fundamental * (1.0 + vibrato_depth * np.sin(2 * np.pi * vibrato_hz * tt))
    phase = 2 * np.pi * np.cumsum(inst) / sample_rate
    if phases is None:
        phases = np.zeros(len(amplitudes))
    out = np.zeros(n)
    for h, (a, p0) in enumerate(zip(amplitudes, phases), start=1):
        out += a * np.sin(h * phase + p0)
    if tremolo_depth > 0:
        out *= 1.0 + tremolo_depth * np.sin(2 * np.pi * tremolo_hz * tt)
    return out


def _voiced_segment(rng: np.random.Generator, n: int, sample_rate: int) -> np.ndarray:
    f0 = rng.uniform(80.0, 300.0)
    n_harm = int(rng.integers(3, 9))
    amps = rng.uniform(0.4, 1.0, n_harm) / np.arange(1, n_harm + 1)
    phases = rng.uniform(0, 2 * np.pi, n_harm)
    seg = harmonic_tone(
        n, sample_rate, f0, amps, phases,
        vibrato_hz=rng.uniform(4.0, 7.0), vibrato_depth=rng.uniform(0.003, 0.015),
        tremolo_hz=rng.uniform(2.0, 5.0), tremolo_depth=rng.uniform(0.05, 0.25),
    )
    # attack/release envelope so segments do not click
    ramp = max(2, n // 8)
    env = np.ones(n)
    env[:ramp] = np.linspace(0.0, 1.0, ramp)
    env[-ramp:] = np.linspace(1.0, 0.0, ramp)
    return seg * env


def synth_clean(spec: MixSpec, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """Deterministic speech-like clip: harmonic voiced segments with pauses,
    peak-normalized to 0.5."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.clean_seed))
    n = int(round(spec.duration_s * sample_rate))
    out = np.zeros(max(n, 1))
    pos = 0
    while pos < len(out):
        seg_len = int(rng.integers(int(0.08 * sample_rate), int(0.30 * sample_rate)))
        take = min(seg_len, len(out) - pos)
        if take >= 2:
            out[pos : pos + take] += _voiced_segment(rng, take, sample_rate)
        else:
            out[pos:] = 0.01
        pos += seg_len
        pos += int(rng.integers(int(0.02 * sample_rate), int(0.12 * sample_rate)))
    peak = np.max(np.abs(out))
    if peak > 0:
        out = (out / peak) * 0.5
    return AudioClip(out[:n] if n >= 1 else out, sample_rate)


def synth_noise(kind: str, seed: int, n: int, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """Deterministic noise clip of the given kind, peak-normalized to 0.5."""
    if kind not in NOISE_KINDS:
        raise SignalError(f"unknown noise kind {kind!r}, expected one of {NOISE_KINDS}")
    ss = np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss)
    if kind == "white":
        out = rng.standard_normal(n)
    elif kind == "pink":
        w = rng.standard_normal(n)
        spec = np.fft.rfft(w)
        k = np.arange(len(spec), dtype=np.float64)
        spec[1:] /= np.sqrt(k[1:])
        spec[0] = 0.0
        out = np.fft.irfft(spec, n=n)
    else:  # filtered-babble: several competing synthetic voices, lowpassed
        out = np.zeros(n)
        for child in ss.spawn(6):
            vr = np.random.default_rng(child)
            pos = int(vr.integers(0, max(1, n // 4)))
            while pos < n:
                seg_len = int(vr.integers(int(0.06 * sample_rate), int(0.25 * sample_rate)))
                take = min(seg_len, n - pos)
                if take >= 2:
                    out[pos : pos + take] += 0.4 * _voiced_segment(vr, take, sample_rate)
                pos += seg_len + int(vr.integers(0, int(0.05 * sample_rate)))
        kernel = np.ones(9) / 9.0
        out = np.convolve(out, kernel, mode="same")
    peak = np.max(np.abs(out))
    if peak > 0:
        out = (out / peak) * 0.5
    return AudioClip(out, sample_rate)


# -- SNR mixing --------------------------------------------------------------

@dataclass
class MixResult:
    noisy: AudioClip
    clean: AudioClip
    noise: AudioClip
    gain: float


def mix_components(clean: AudioClip, noise: AudioClip, snr_db: float) -> MixResult:
    """Scale noise to hit the requested SNR and add it to clean speech.

    If the mixture peaks above 1, mixture and components are rescaled
    jointly, which leaves the SNR untouched and keeps the returned clean
    target consistent with the mixture.
    """
    if len(clean) != len(noise):
        raise SignalError(f"length mismatch: clean {len(clean)} vs noise {len(noise)}")
    if clean.sample_rate != noise.sample_rate:
        raise SignalError(
            f"sample-rate mismatch: clean {clean.sample_rate} vs noise {noise.sample_rate}"
        )
    p_clean = float(np.mean(clean.samples**2))
    p_noise = float(np.mean(noise.samples**2))
    if p_clean == 0.0 or p_noise == 0.0:
        raise SignalError("mixing needs nonzero clean and noise power")
    gain = float(np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0))))
    c = clean.samples
    d = gain * noise.samples
    mix = c + d
    peak = float(np.max(np.abs(mix)))
    if peak > 1.0:
        c = c / peak
        d = d / peak
        mix = mix / peak
    sr = clean.sample_rate
    return MixResult(AudioClip(mix, sr), AudioClip(c, sr), AudioClip(d, sr), gain)


def mix_at_snr(clean: AudioClip, noise: AudioClip, snr_db: float) -> AudioClip:
    return mix_components(clean, noise, snr_db).noisy


def measured_snr_db(clean: np.ndarray, noise: np.ndarray) -> float:
    return float(10.0 * np.log10(np.mean(clean**2) / np.mean(noise**2)))


# -- spectra -----------------------------------------------------------------

def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def stft(clip: AudioClip, cfg: StftConfig) -> np.ndarray:
    """Complex spectrogram [frames, bins] of Hann-windowed, hop-strided
    frames zero-padded to fft_size. Analysis only; for the differentiable
    path see stft_magnitude."""
    x = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    if len(x) < cfg.window_len:
        raise SignalError(f"clip of {len(x)} samples is shorter than one window of {cfg.window_len}")
    n_frames = 1 + (len(x) - cfg.window_len) // cfg.hop
    idx = np.arange(cfg.window_len)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = x[idx] * hann_window(cfg.window_len)[None, :]
    return np.fft.rfft(frames, n=cfg.fft_size, axis=-1)


def _stft_mag_np(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Magnitude spectrogram of a [B, t] batch, plain numpy (no tape).

    Mirrors stft_magnitude's arithmetic step for step (same dtype, same
    sqrt route) so that identical waveforms give bit-identical magnitudes
    and the loss between them is exactly zero.
    """
    if x.shape[-1] < cfg.window_len:
        raise SignalError(f"signal of {x.shape[-1]} samples is shorter than one window of {cfg.window_len}")
    n_frames = 1 + (x.shape[-1] - cfg.window_len) // cfg.hop
    idx = np.arange(cfg.window_len)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = x[:, idx] * hann_window(cfg.window_len).astype(x.dtype)[None, None, :]
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=-1)
    re = spec.real.astype(x.dtype)
    im = spec.imag.astype(x.dtype)
    return np.power(re * re + im * im, 0.5)


def stft_magnitude(x: T.Tensor, cfg: StftConfig) -> T.Tensor:
    """Differentiable magnitude spectrogram: [B, t] -> [B, frames, bins]."""
    bins = cfg.fft_size // 2 + 1
    frames = T.frame_signal(x, cfg.window_len, cfg.hop)
    win = hann_window(cfg.window_len).astype(x.dtype)
    windowed = frames * T.Tensor(np.broadcast_to(win, frames.shape).copy())
    spec = T.rdft(windowed, cfg.fft_size)
    re = T.slice_axis(spec, -1, 0, bins)
    im = T.slice_axis(spec, -1, bins, 2 * bins)
    return (re * re + im * im).pow(0.5)


def _as_batch(x) -> T.Tensor:
    if not isinstance(x, T.Tensor):
        x = T.Tensor(np.asarray(x, dtype=np.float64))
    if x.ndim == 1:
        return x.reshape(1, x.shape[0])
    if x.ndim == 2:
        return x
    if x.ndim == 3 and x.shape[1] == 1:
        return x.reshape(x.shape[0], x.shape[2])
    raise SignalError(f"expected waveform of rank 1-3 with one channel, got shape {x.shape}")


LOG_MAG_EPS = 1e-7


def mrstft_loss(est, ref, resolutions=DEFAULT_RESOLUTIONS) -> T.Tensor:
    """Multi-resolution STFT loss, differentiable w.r.t. est.

    Per resolution: spectral convergence ||R| - |E||_F / ||R||_F plus the
    log-magnitude l1 term mean(|log(|R|+eps) - log(|E|+eps)|); the final
    value is the mean over resolutions. The reference side is treated as
    a constant.
    """
    est = _as_batch(est)
    ref_b = _as_batch(ref)
    if est.shape != ref_b.shape:
        raise SignalError(f"length mismatch: est {est.shape} vs ref {ref_b.shape}")
    ref_np = ref_b.data.astype(est.dtype)

    total = None
    for cfg in resolutions:
        mag_e = stft_magnitude(est, cfg)
        mag_r = _stft_mag_np(ref_np, cfg)
        ref_t = T.Tensor(mag_r)
        diff = mag_e - ref_t
        num = (diff * diff).sum().pow(0.5)
        den = float(np.sqrt((mag_r.astype(np.float64) ** 2).sum())) + 1e-12
        sc = num * (1.0 / den)
        log_term = ((ref_t + LOG_MAG_EPS).log() - (mag_e + LOG_MAG_EPS).log()).abs().mean()
        term = sc + log_term
        total = term if total is None else total + term
    return total * (1.0 / len(resolutions))


# -- evaluation metric --------------------------------------------------------

SI_SDR_CAP_DB = 60.0


def si_sdr(est, ref) -> float:
    """Scale-invariant SDR in dB: project est onto ref, then compare the
    projection's power to the residual's. Capped at +/-60 dB."""
    e = est.samples if isinstance(est, AudioClip) else np.asarray(est, dtype=np.float64)
    r = ref.samples if isinstance(ref, AudioClip) else np.asarray(ref, dtype=np.float64)
    if e.shape != r.shape:
        raise SignalError(f"length mismatch: est {e.shape} vs ref {r.shape}")
    ref_power = float(np.dot(r, r))
    if ref_power == 0.0:
        raise SignalError("si_sdr needs a reference with nonzero power")
    alpha = float(np.dot(r, e)) / ref_power
    target = alpha * r
    residual = e - target
    tp = float(np.dot(target, target))
    rp = float(np.dot(residual, residual))
    if rp == 0.0:
        return SI_SDR_CAP_DB
    if tp == 0.0:
        return -SI_SDR_CAP_DB
    return float(np.clip(10.0 * np.log10(tp / rp), -SI_SDR_CAP_DB, SI_SDR_CAP_DB))


# -- corpus ------------------------------------------------------------------

@dataclass
class DataConfig:
    """Synthetic corpus layout. Split seed streams are disjoint by
    construction, and the test split defaults to noise kinds unseen in
    training."""

    seed: int = 0
    n_train: int = 200
    n_val: int = 40
    n_test: int = 40
    duration_s: float = 1.0
    snr_db: tuple = (0.0, 5.0, 10.0, 15.0)
    train_noise: tuple = ("white", "pink")
    val_noise: tuple = ("white", "pink")
    test_noise: tuple = ("filtered-babble",)

    def __post_init__(self):
        for kinds in (self.train_noise, self.val_noise, self.test_noise):
            for k in kinds:
                if k not in NOISE_KINDS:
                    raise SignalError(f"unknown noise kind {k!r}")


_SPLIT_IDS = {"train": 1, "val": 2, "test": 3}
_CLEAN_TAG = 11
_NOISE_TAG = 13


def _derive_seed(*parts) -> int:
    state = np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(2)
    return int(state[0]) << 32 | int(state[1])


def build_manifest(cfg: DataConfig, split: str) -> list[dict]:
    """Per-sample mixing recipes for one split, fully determined by
    (cfg.seed, split, index)."""
    if split not in _SPLIT_IDS:
        raise SignalError(f"unknown split {split!r}")
    sid = _SPLIT_IDS[split]
    count = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}[split]
    kinds = {"train": cfg.train_noise, "val": cfg.val_noise, "test": cfg.test_noise}[split]
    records = []
    for i in range(count):
        records.append({
            "index": i,
            "clean_seed": _derive_seed(cfg.seed, sid, i, _CLEAN_TAG),
            "noise_seed": _derive_seed(cfg.seed, sid, i, _NOISE_TAG),
            "snr_db": float(cfg.snr_db[i % len(cfg.snr_db)]),
            "noise_kind": kinds[i % len(kinds)],
            "duration_s": float(cfg.duration_s),
        })
    return records


def write_manifest(records: list[dict], path) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    records = []
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise SignalError(f"bad manifest line {line_no} in {path}: {e}") from e
    return records


def realize_sample(record: dict, sample_rate: int = SAMPLE_RATE) -> tuple[AudioClip, AudioClip]:
    """Materialize one (noisy, clean) pair from a manifest record."""
    spec = MixSpec(
        snr_db=record["snr_db"],
        clean_seed=record["clean_seed"],
        noise_seed=record["noise_seed"],
        noise_kind=record["noise_kind"],
        duration_s=record["duration_s"],
    )
    clean = synth_clean(spec, sample_rate)
    noise = synth_noise(spec.noise_kind, spec.noise_seed, len(clean), sample_rate)
    mixed = mix_components(clean, noise, spec.snr_db)
    return mixed.noisy, mixed.clean


def realize_split(cfg: DataConfig, split: str) -> list[tuple[AudioClip, AudioClip]]:
    return [realize_sample(rec) for rec in build_manifest(cfg, split)]
