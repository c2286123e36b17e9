"""Doubly-dispersive channel model on the delay-Doppler grid.

Each propagation path contributes a cyclically delayed, Doppler-rotated copy
of the time-domain frame:

    H_T = sum_i  g_i * Pi^{l_i} * Delta^{nu_i},   Delta = diag(exp(2j*pi*n/MN))

with integer delay l_i and (generally fractional) normalized Doppler
nu_i = k_i + kappa_i, kappa_i in [-0.5, 0.5). The delay-Doppler coupling
matrix is the Doppler-domain conjugation

    H_DD = kron(F_N, I_M) @ H_T @ kron(F_N^H, I_M)

computed here with orthonormal FFTs along the Doppler axis (the dense
Kronecker products never materialize).

Path statistics follow the classic wide-sense stationary scattering picture:
uniform power-delay profile with gains CN(0, 1/P), path speeds
v_i = v_max * cos(theta_i) with theta_i uniform, giving the bathtub-shaped
Doppler spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidArgumentError

C_LIGHT = 3.0e8  # m/s, exact by convention here

# magnitudes below this count as structural zeros in sparsity summaries
SUPPORT_THRESHOLD = 1e-9


@dataclass(frozen=True)
class PathTap:
    gain: complex
    delay: int           # integer delay shift, taps
    doppler_int: int     # nearest-bin Doppler index k
    doppler_frac: float  # fractional remainder kappa in [-0.5, 0.5)

    @property
    def doppler(self) -> float:
        return self.doppler_int + self.doppler_frac


@dataclass(frozen=True)
class ChannelRealization:
    taps: tuple

    @property
    def n_paths(self) -> int:
        return len(self.taps)

    def total_power(self) -> float:
        return float(sum(abs(t.gain) ** 2 for t in self.taps))


@dataclass(frozen=True)
class ChannelGenParams:
    """Statistical channel parameters tied to a frame geometry."""

    n_paths: int = 6
    l_max: int = 10        # largest admissible integer delay
    v_max: float = 138.9   # vehicle speed bound [m/s]
    f_c: float = 4e9       # carrier [Hz]
    delta_f: float = 15e3  # subcarrier spacing [Hz]
    n_doppler: int = 16    # Doppler bins N (Doppler resolution delta_f / N)

    def __post_init__(self):
        if self.n_paths < 1:
            raise InvalidArgumentError("need at least one path")
        if self.l_max < 0 or self.l_max < self.n_paths - 1:
            raise InvalidArgumentError(
                f"l_max={self.l_max} cannot host {self.n_paths - 1} distinct nonzero delays"
            )
        if self.v_max < 0 or self.f_c <= 0 or self.delta_f <= 0 or self.n_doppler < 1:
            raise InvalidArgumentError("bad physical parameters")

    def max_normalized_doppler(self) -> float:
        """Largest |nu| any path can take (attained at theta = 0 or pi)."""
        return self.v_max * self.f_c / C_LIGHT * self.n_doppler / self.delta_f


def split_doppler(nu: float) -> tuple[int, float]:
    """Split normalized Doppler into integer part and kappa in [-0.5, 0.5)."""
    k = int(np.floor(nu + 0.5))
    return k, nu - k


def draw_channel(params: ChannelGenParams, rng: np.random.Generator) -> ChannelRealization:
    """Sample one channel realization.

    First path sits at delay 0; the rest occupy distinct delays from
    1..l_max. Gains are CN(0, 1/P) (unit total average power), Dopplers come
    from v_max * cos(theta) with uniform theta.
    """
    p = params.n_paths
    if p == 1:
        delays = np.zeros(1, dtype=np.int64)
    else:
        rest = rng.choice(np.arange(1, params.l_max + 1), size=p - 1, replace=False)
        delays = np.concatenate(([0], np.sort(rest)))
    g = rng.standard_normal((p, 2)) @ np.array([1.0, 1j]) * np.sqrt(0.5 / p)
    theta = rng.uniform(-np.pi, np.pi, size=p)
    speeds = params.v_max * np.cos(theta)
    nus = speeds * params.f_c / C_LIGHT * params.n_doppler / params.delta_f
    taps = []
    for i in range(p):
        k, kappa = split_doppler(float(nus[i]))
        taps.append(PathTap(gain=complex(g[i]), delay=int(delays[i]),
                            doppler_int=k, doppler_frac=kappa))
    return ChannelRealization(taps=tuple(taps))


# --------------------------------------------------------------------------
# matrix assembly
# --------------------------------------------------------------------------

def build_time_channel(ch: ChannelRealization, mn: int) -> np.ndarray:
    """Dense MN x MN time-domain matrix; column n scatters to row (n+l) mod MN."""
    if mn < 1:
        raise InvalidArgumentError("mn must be positive")
    h_t = np.zeros((mn, mn), dtype=np.complex128)
    cols = np.arange(mn)
    for tap in ch.taps:
        if not 0 <= tap.delay < mn:
            raise InvalidArgumentError(f"delay {tap.delay} outside [0, {mn})")
        phase = np.exp(2j * np.pi * tap.doppler * cols / mn)
        h_t[(cols + tap.delay) % mn, cols] += tap.gain * phase
    return h_t


def _doppler_ifft_cols(a: np.ndarray, m: int, n: int) -> np.ndarray:
    # right-multiplication by kron(F_N^H, I_M)
    b = a.reshape((a.shape[0], m, n), order="F")
    b = np.fft.ifft(b, axis=2, norm="ortho")
    return b.reshape((a.shape[0], m * n), order="F")


def _doppler_fft_rows(a: np.ndarray, m: int, n: int) -> np.ndarray:
    # left-multiplication by kron(F_N, I_M)
    b = a.reshape((m, n, a.shape[1]), order="F")
    b = np.fft.fft(b, axis=1, norm="ortho")
    return b.reshape((m * n, a.shape[1]), order="F")


@dataclass(frozen=True)
class DdChannelMatrix:
    """Delay-Doppler coupling matrix plus a per-row support summary."""

    h_dd: np.ndarray
    row_support: np.ndarray  # count of entries per row with |.| > SUPPORT_THRESHOLD

    @property
    def shape(self):
        return self.h_dd.shape


def build_dd_channel(h_t: np.ndarray, m: int, n: int) -> DdChannelMatrix:
    """Conjugate the time-domain matrix into the delay-Doppler domain."""
    h_t = np.asarray(h_t, dtype=np.complex128)
    mn = m * n
    if h_t.shape != (mn, mn):
        raise DimensionMismatchError(f"expected ({mn}, {mn}) matrix, got {h_t.shape}")
    h_dd = _doppler_fft_rows(_doppler_ifft_cols(h_t, m, n), m, n)
    support = np.count_nonzero(np.abs(h_dd) > SUPPORT_THRESHOLD, axis=1)
    return DdChannelMatrix(h_dd=h_dd, row_support=support)


def coupling_matrix(h) -> np.ndarray:
    """Accept either a DdChannelMatrix or a bare ndarray."""
    return h.h_dd if isinstance(h, DdChannelMatrix) else np.asarray(h, dtype=np.complex128)


# --------------------------------------------------------------------------
# link-level pieces
# --------------------------------------------------------------------------

def snr_to_gamma(snr_db: float) -> float:
    """Noise variance for unit-energy symbols through a unit-power channel."""
    return float(10.0 ** (-snr_db / 10.0))


def apply_channel_awgn(x_t, h_t, gamma: float, rng: np.random.Generator) -> np.ndarray:
    """y = H_T x + w with circular complex noise of variance gamma per sample."""
    if gamma < 0:
        raise InvalidArgumentError(f"gamma must be non-negative, got {gamma}")
    h_t = np.asarray(h_t, dtype=np.complex128)
    x_t = np.asarray(x_t, dtype=np.complex128)
    if h_t.ndim != 2 or h_t.shape[0] != h_t.shape[1] or x_t.shape != (h_t.shape[1],):
        raise DimensionMismatchError(
            f"shape mismatch: H {h_t.shape} vs x {x_t.shape}"
        )
    noise = rng.standard_normal((x_t.shape[0], 2)) @ np.array([1.0, 1j])
    return h_t @ x_t + np.sqrt(gamma / 2.0) * noise
