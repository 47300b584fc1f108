"""Excitation sweeps, a modal-resonator plant, and contact detection.

The plant stands in for a physical gripper/object system: each object
configuration is modeled as a small bank of second-order resonant modes
driven by the excitation sweep, plus additive white Gaussian noise at a
configured SNR.  Everything here is a pure function of its inputs
(including the noise seed), so calls are safe from any thread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import ParameterError

DEFAULT_SAMPLE_RATE = 44100.0
DEFAULT_SWEEP_POINTS = 42000
DEFAULT_DEBOUNCE = 50


@dataclass(frozen=True)
class Waveform:
    """Uniformly sampled real signal (dimensionless amplitudes)."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ParameterError("waveform must be a non-empty 1-D sequence")
        if not np.isfinite(samples).all():
            raise ParameterError("waveform samples must be finite")
        if not (self.sample_rate > 0):
            raise ParameterError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class ChirpSpec:
    """Linear sweep from f0 to f1 over `duration` seconds."""

    f0: float
    f1: float
    duration: float
    sample_rate: float = DEFAULT_SAMPLE_RATE
    truncate_to: int | None = None

    def __post_init__(self):
        if not (0 < self.f0 < self.f1 < self.sample_rate / 2):
            raise ParameterError(
                "need 0 < f0 < f1 < Nyquist, got "
                f"f0={self.f0}, f1={self.f1}, fs={self.sample_rate}"
            )
        if not (self.duration > 0):
            raise ParameterError("duration must be positive")
        if self.truncate_to is not None:
            n_full = int(round(self.duration * self.sample_rate))
            if not (0 < self.truncate_to <= n_full):
                raise ParameterError(
                    f"truncate_to={self.truncate_to} outside (0, {n_full}]"
                )

    def instantaneous_frequency(self, t: float) -> float:
        """Frequency of the sweep at time t: f0 + (f1 - f0) * t / T."""
        return self.f0 + (self.f1 - self.f0) * t / self.duration


def default_chirp_spec() -> ChirpSpec:
    """The pipeline's standard excitation: 20 Hz to 20 kHz over 1 s,
    sampled at 44.1 kHz and truncated to the first 42,000 points."""
    return ChirpSpec(
        f0=20.0,
        f1=20000.0,
        duration=1.0,
        sample_rate=DEFAULT_SAMPLE_RATE,
        truncate_to=DEFAULT_SWEEP_POINTS,
    )


@dataclass(frozen=True)
class ModalPlant:
    """Bank of (center_frequency_hz, damping_ratio, gain) resonant modes.

    `noise_snr_db` may be math.inf for a noise-free plant.  The
    `label_metadata` dict carries task tags (class id, grasp position,
    pose angle, contact type) and does not affect synthesis.
    """

    modes: tuple[tuple[float, float, float], ...]
    noise_snr_db: float = math.inf
    label_metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        modes = tuple((float(f), float(z), float(g)) for f, z, g in self.modes)
        if not modes:
            raise ParameterError("plant needs at least one mode")
        for f, z, g in modes:
            if not (f > 0):
                raise ParameterError(f"mode frequency must be positive, got {f}")
            if not (0 < z < 1):
                raise ParameterError(f"damping ratio must be in (0, 1), got {z}")
            if not (g >= 0):
                raise ParameterError(f"mode gain must be non-negative, got {g}")
        object.__setattr__(self, "modes", modes)


@dataclass(frozen=True)
class ContactEvent:
    detected: bool
    sample_index: int | None
    false_positive: bool

    def __post_init__(self):
        if not self.detected and self.sample_index is not None:
            raise ParameterError("undetected event cannot carry a sample index")
        if self.false_positive and not self.detected:
            raise ParameterError("false_positive implies detected")


def generate_chirp(spec: ChirpSpec) -> Waveform:
    """Synthesize the linear sweep sin(2*pi*(f0*t + (f1-f0)*t^2/(2T)))."""
    n_full = int(round(spec.duration * spec.sample_rate))
    t = np.arange(n_full, dtype=np.float64) / spec.sample_rate
    phase = 2.0 * np.pi * (
        spec.f0 * t + (spec.f1 - spec.f0) * t * t / (2.0 * spec.duration)
    )
    samples = np.sin(phase)
    if spec.truncate_to is not None:
        samples = samples[: spec.truncate_to]
    return Waveform(samples, spec.sample_rate)


def _resonator_coeffs(
    freq_hz: float, damping: float, gain: float, sample_rate: float
) -> tuple[np.ndarray, np.ndarray]:
    """Two-pole band-pass (impulse-invariant pole placement).

    Poles sit at radius exp(-damping * w0 / fs); the pole angle is
    corrected so the magnitude peak of the (1 - z^-2) band-pass lands on
    freq_hz itself, and the numerator is scaled for |H| = gain there.
    """
    w0 = 2.0 * np.pi * freq_hz / sample_rate
    r = math.exp(-damping * w0)
    # Peak of |(1-z^-2)/A(z)| is at cos(w) = (2r/(1+r^2)) cos(theta);
    # invert so the peak lands on w0.
    c = (1.0 + r * r) / (2.0 * r) * math.cos(w0)
    theta = math.acos(min(1.0, max(-1.0, c)))
    a = np.array([1.0, -2.0 * r * math.cos(theta), r * r])
    b = np.array([1.0, 0.0, -1.0])
    z = np.exp(-1j * w0)
    h0 = abs((1.0 - z**2) / (a[0] + a[1] * z + a[2] * z**2))
    if h0 <= 0:
        raise ParameterError(f"degenerate resonator at {freq_hz} Hz")
    return b * (gain / h0), a


def modal_response(plant: ModalPlant, excitation: Waveform) -> np.ndarray:
    """Noise-free plant output: the excitation through each mode, summed."""
    nyquist = excitation.sample_rate / 2
    for f, _, _ in plant.modes:
        if f >= nyquist:
            raise ParameterError(
                f"mode frequency {f} Hz is at or above Nyquist ({nyquist} Hz)"
            )
    out = np.zeros(len(excitation))
    for f, z, g in plant.modes:
        b, a = _resonator_coeffs(f, z, g, excitation.sample_rate)
        out += lfilter(b, a, excitation.samples)
    return out


def noise_std_for_snr(clean: np.ndarray, snr_db: float) -> float:
    """Std of additive white noise giving the requested SNR vs `clean`."""
    if math.isinf(snr_db):
        return 0.0
    power = float(np.mean(clean * clean))
    return math.sqrt(power * 10.0 ** (-snr_db / 10.0))


def apply_noise(clean: np.ndarray, snr_db: float, seed: int) -> np.ndarray:
    std = noise_std_for_snr(clean, snr_db)
    if std == 0.0:
        return clean.copy()
    rng = np.random.default_rng(seed)
    return clean + rng.normal(0.0, std, clean.size)


def synth_response(plant: ModalPlant, excitation: Waveform, seed: int) -> Waveform:
    """Received waveform for `excitation` through `plant` with seeded noise.

    Identical (plant, excitation, seed) triples produce bit-identical
    output.
    """
    clean = modal_response(plant, excitation)
    return Waveform(apply_noise(clean, plant.noise_snr_db, seed), excitation.sample_rate)


def detect_contact(
    stream: Waveform, threshold: float, debounce: int = DEFAULT_DEBOUNCE
) -> ContactEvent:
    """First index where |sample| >= threshold.

    A crossing earlier than `debounce` samples is flagged as a false
    positive (almost-immediate detections should be re-attempted by the
    caller).  No crossing at all yields detected=False.
    """
    if not (threshold > 0):
        raise ParameterError("threshold must be positive")
    if debounce < 0:
        raise ParameterError("debounce must be non-negative")
    hits = np.abs(stream.samples) >= threshold
    if not hits.any():
        return ContactEvent(detected=False, sample_index=None, false_positive=False)
    idx = int(np.argmax(hits))
    return ContactEvent(detected=True, sample_index=idx, false_positive=idx < debounce)


def write_waveform_csv(w: Waveform, path: str | Path) -> Path:
    """One sample per row, for quick inspection."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write("sample\n")
        for v in w.samples:
            fh.write(f"{float(v)!r}\n")
    return path


def waveform_to_container_arrays(w: Waveform) -> tuple[dict, dict]:
    arrays = {"samples": w.samples}
    meta = {"sample_rate": w.sample_rate}
    return arrays, meta


def waveform_from_container_arrays(arrays: dict, meta: dict) -> Waveform:
    return Waveform(arrays["samples"], float(meta["sample_rate"]))
