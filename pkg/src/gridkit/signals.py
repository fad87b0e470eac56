"""Phasor extraction by correlation and Prony ring-down mode estimation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import GridkitError, SingularSystemError


@dataclass(frozen=True, eq=False)
class WaveRecord:
    samples: np.ndarray
    fs: float
    f0: float | None = 60.0       # None for records with no nominal frequency

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float).ravel()
        object.__setattr__(self, "samples", x)
        if not self.fs > 0:
            raise GridkitError("sample rate must be positive")
        if self.f0 is None:
            return
        if not self.fs > 2 * self.f0:
            raise GridkitError(f"sample rate {self.fs} Hz must exceed twice f0 = {self.f0} Hz")
        if x.size < self.fs / self.f0:
            raise GridkitError("record is shorter than one nominal cycle")

    @property
    def samples_per_cycle(self) -> float:
        return self.fs / self.f0

    @classmethod
    def from_csv(cls, text: str, f0: float | None = 60.0) -> "WaveRecord":
        """Read ``time,value`` rows (header required); fs from the median step."""
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [h.strip() for h in rows[0]] != ["time", "value"]:
            raise GridkitError("waveform CSV must start with the header 'time,value'")
        try:
            data = np.array([[float(a), float(b)] for a, b in rows[1:] if a.strip()])
        except ValueError as exc:
            raise GridkitError(f"bad waveform row: {exc}") from None
        if len(data) < 2:
            raise GridkitError("waveform needs at least two samples")
        dt = np.diff(data[:, 0])
        if np.any(dt <= 0):
            raise GridkitError("waveform time stamps must increase")
        return cls(data[:, 1], 1.0 / float(np.median(dt)), f0)


def estimate_phasor(rec: WaveRecord, start: int = 0, stop: int | None = None) -> complex:
    """Phasor of the nominal-frequency component over ``samples[start:stop]``.

    ``A cos(2 pi f0 t + phi)`` with ``t = n / fs`` maps to ``A exp(j phi)``.
    The window must hold an integer number of nominal cycles.
    """
    if rec.f0 is None:
        raise GridkitError("phasor estimation needs the nominal frequency f0")
    x = rec.samples
    stop = x.size if stop is None else stop
    if not 0 <= start < stop <= x.size:
        raise GridkitError(f"bad window [{start}, {stop}) for {x.size} samples")
    n_win = stop - start
    cycles = n_win * rec.f0 / rec.fs
    if abs(cycles - round(cycles)) > 1e-9 or round(cycles) < 1:
        raise GridkitError(f"window of {n_win} samples spans {cycles:.4g} cycles, not an integer")
    n = np.arange(start, stop)
    basis = np.exp(-2j * np.pi * rec.f0 * n / rec.fs)
    return complex(2.0 / n_win * np.dot(x[start:stop], basis))


def _dirichlet(delta: float, n: int) -> float:
    """|mean of exp(j delta k)| for k = 0..n-1."""
    half = 0.5 * delta
    if abs(np.sin(half)) < 1e-15:
        return 1.0
    return float(abs(np.sin(n * half) / (n * np.sin(half))))


def leakage_bound(df: float, f0: float, fs: float, n_window: int) -> float:
    """Worst-case relative magnitude error for a tone at ``f0 + df``.

    The correlation output is the true phasor scaled by a Dirichlet-kernel
    gain plus an image term from the negative-frequency component; the bound
    adds both deviations.
    """
    d1 = _dirichlet(2 * np.pi * df / fs, n_window)
    d2 = _dirichlet(2 * np.pi * (2 * f0 + df) / fs, n_window)
    return (1 - d1) + d2


@dataclass(frozen=True)
class Mode:
    frequency: float      # Hz, >= 0
    decay: float          # 1/s; positive for a decaying mode
    amplitude: float
    phase: float          # rad

    @property
    def damping_ratio(self) -> float:
        w = 2 * np.pi * self.frequency
        return float(self.decay / np.hypot(self.decay, w)) if (self.decay or w) else 0.0

    def to_dict(self) -> dict:
        return {"frequency": self.frequency, "decay": self.decay, "damping_ratio": self.damping_ratio,
                "amplitude": self.amplitude, "phase": self.phase}


def synthesize(modes, fs: float, n: int) -> np.ndarray:
    """Sum of ``A exp(-decay t) cos(2 pi f t + phase)`` sampled at ``t = k / fs``."""
    t = np.arange(n) / fs
    x = np.zeros(n)
    for m in modes:
        x += m.amplitude * np.exp(-m.decay * t) * np.cos(2 * np.pi * m.frequency * t + m.phase)
    return x


def prony_modes(samples, fs: float, order: int, amp_tol: float = 1e-9) -> list[Mode]:
    """Prony fit of damped sinusoids.

    Forward linear prediction of the given ``order`` (minimum-norm least
    squares), roots of the prediction polynomial, then a Vandermonde least
    squares refit of the complex amplitudes.  Conjugate root pairs are merged
    into one real mode; modes whose amplitude is below ``amp_tol`` relative to
    the largest are dropped, which lets an over-sized order fit a signal with
    fewer modes.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if order < 1:
        raise GridkitError("order must be at least 1")
    if x.size < 2 * order + 1:
        raise SingularSystemError(f"{x.size} samples are too few for order {order}")
    if not np.any(x):
        raise SingularSystemError("all-zero record has no modes")
    N = x.size
    # x[n] = -sum_k a_k x[n-k]
    Phi = np.column_stack([x[order - k:N - k] for k in range(1, order + 1)])
    rhs = -x[order:]
    a = np.linalg.lstsq(Phi, rhs, rcond=None)[0]
    z = np.roots(np.concatenate([[1.0], a]))
    z = z[np.abs(z) > 1e-12]
    if z.size == 0:
        raise SingularSystemError("prediction polynomial has no usable roots")
    V = np.vander(z, N, increasing=True).T
    c = np.linalg.lstsq(V, x.astype(complex), rcond=None)[0]
    s = fs * np.log(z.astype(complex))
    keep = np.abs(c) > amp_tol * np.abs(c).max()
    modes = []
    used = np.zeros(z.size, dtype=bool)
    idx = [i for i in np.argsort(-np.abs(c)) if keep[i]]
    for i in idx:
        if used[i]:
            continue
        used[i] = True
        freq = abs(s[i].imag) / (2 * np.pi)
        if abs(z[i].imag) <= 1e-9 * abs(z[i]) and z[i].real > 0:
            modes.append(Mode(0.0, float(-s[i].real), float(abs(c[i].real)),
                              0.0 if c[i].real >= 0 else float(np.pi)))
            continue
        if abs(z[i].imag) <= 1e-9 * abs(z[i]):
            # negative real root: a Nyquist-rate oscillation
            modes.append(Mode(fs / 2, float(-s[i].real), float(abs(c[i])), float(np.angle(c[i]))))
            continue
        # partner is the conjugate root
        partner = [j for j in range(z.size) if not used[j] and abs(z[j] - np.conj(z[i])) < 1e-6 * abs(z[i])]
        if partner:
            used[partner[0]] = True
            amp = 2 * abs(c[i])
        else:
            amp = abs(c[i])
        root = z[i] if z[i].imag > 0 else np.conj(z[i])
        coef = c[i] if z[i].imag > 0 else np.conj(c[i])
        modes.append(Mode(float(freq), float(-(fs * np.log(root)).real), float(amp), float(np.angle(coef))))
    return sorted(modes, key=lambda m: (m.frequency, m.decay))
