"""Delay-Doppler frames, constellations and bit mapping.

A frame is an M x N grid (M delay bins, N Doppler bins) flattened
column-major: entry (m, n) sits at index n*M + m of the symbol vector.
Modulation applies the inverse orthonormal DFT along the Doppler axis
(equivalently multiplies by kron(F_N^H, I_M)); demodulation is the adjoint.
Both are unitary, so noise whiteness and signal energy survive the domain
change exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidArgumentError

CONSTELLATION_NAMES = ("bpsk", "qpsk", "16qam")


# --------------------------------------------------------------------------
# constellations
# --------------------------------------------------------------------------

def _pam_gray(bits):
    # Gray-labelled PAM amplitude for an MSB-first bit tuple, levels
    # +/-1, +/-3, ... before normalization.
    if len(bits) > 1:
        return (1 - 2 * bits[0]) * (2 ** len(bits[1:]) - _pam_gray(bits[1:]))
    return 1 - 2 * bits[0]


@dataclass(frozen=True)
class ConstellationSpec:
    """Unit-energy alphabet with an implicit MSB-first integer labelling.

    points[i] is the symbol whose bit pattern is the binary expansion of i;
    bit 0 of the pattern is the most significant.
    """

    name: str
    points: np.ndarray
    bits_per_symbol: int

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.complex128)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.shape[0] != 2 ** self.bits_per_symbol:
            raise InvalidArgumentError(
                f"constellation {self.name!r}: need 2**{self.bits_per_symbol} points, "
                f"got shape {pts.shape}"
            )
        if len(np.unique(pts)) != pts.shape[0]:
            raise InvalidArgumentError(f"constellation {self.name!r} has duplicate points")
        energy = float(np.mean(np.abs(pts) ** 2))
        if abs(energy - 1.0) > 1e-12:
            raise InvalidArgumentError(
                f"constellation {self.name!r} mean energy {energy!r} != 1"
            )


def make_constellation(name: str) -> ConstellationSpec:
    """Build one of the supported Gray-labelled unit-energy alphabets."""
    key = name.lower()
    if key == "bpsk":
        k = 1
    elif key == "qpsk":
        k = 2
    elif key == "16qam":
        k = 4
    else:
        raise InvalidArgumentError(
            f"unknown constellation {name!r}; choose from {CONSTELLATION_NAMES}"
        )
    points = np.empty(2 ** k, dtype=np.complex128)
    for idx in range(2 ** k):
        bits = [(idx >> (k - 1 - j)) & 1 for j in range(k)]
        if k == 1:
            points[idx] = _pam_gray(bits)
        else:
            # even bit positions drive the in-phase rail, odd the quadrature
            points[idx] = _pam_gray(bits[0::2]) + 1j * _pam_gray(bits[1::2])
    points /= np.sqrt(np.mean(np.abs(points) ** 2))
    return ConstellationSpec(name=key, points=points, bits_per_symbol=k)


# --------------------------------------------------------------------------
# frame geometry
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OtfsFrameConfig:
    """Grid geometry plus the physical scalings the channel model needs."""

    M: int = 32            # delay bins
    N: int = 16            # Doppler bins
    delta_f: float = 15e3  # subcarrier spacing [Hz]
    f_c: float = 4e9       # carrier frequency [Hz]
    constellation: str = "qpsk"

    def __post_init__(self):
        if int(self.M) != self.M or int(self.N) != self.N or self.M < 1 or self.N < 1:
            raise InvalidArgumentError(f"M, N must be positive integers, got {self.M}, {self.N}")
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "N", int(self.N))
        if self.delta_f <= 0 or self.f_c <= 0:
            raise InvalidArgumentError("delta_f and f_c must be positive")
        make_constellation(self.constellation)  # validates the name

    @property
    def mn(self) -> int:
        return self.M * self.N

    @property
    def bits_per_frame(self) -> int:
        return self.mn * self.constellation_spec().bits_per_symbol

    def constellation_spec(self) -> ConstellationSpec:
        return make_constellation(self.constellation)


def _check_vector(x, mn: int, what: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != mn:
        raise DimensionMismatchError(f"{what}: expected shape ({mn},), got {x.shape}")
    return np.ascontiguousarray(x, dtype=np.complex128)


# --------------------------------------------------------------------------
# bit mapping
# --------------------------------------------------------------------------

def map_bits(bits, spec: ConstellationSpec) -> np.ndarray:
    """Map a flat 0/1 array onto constellation points, MSB first per symbol."""
    bits = np.asarray(bits)
    if bits.ndim != 1:
        raise DimensionMismatchError(f"bits must be 1-D, got shape {bits.shape}")
    if bits.size % spec.bits_per_symbol:
        raise DimensionMismatchError(
            f"bit count {bits.size} not divisible by {spec.bits_per_symbol}"
        )
    if not np.isin(bits, (0, 1)).all():
        raise InvalidArgumentError("bits must contain only 0 and 1")
    groups = bits.reshape(-1, spec.bits_per_symbol).astype(np.int64)
    weights = 2 ** np.arange(spec.bits_per_symbol - 1, -1, -1, dtype=np.int64)
    return spec.points[groups @ weights]


def bits_from_indices(indices, spec: ConstellationSpec) -> np.ndarray:
    """Expand integer point labels back into a flat MSB-first bit array."""
    indices = np.asarray(indices, dtype=np.int64)
    if ((indices < 0) | (indices >= spec.size)).any():
        raise InvalidArgumentError("point label out of range")
    shifts = np.arange(spec.bits_per_symbol - 1, -1, -1, dtype=np.int64)
    return ((indices[:, None] >> shifts[None, :]) & 1).reshape(-1).astype(np.int8)


def symbols_to_bits(x, spec: ConstellationSpec) -> np.ndarray:
    """Exact inverse of map_bits; rejects anything not on the constellation."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1:
        raise DimensionMismatchError(f"symbols must be 1-D, got shape {x.shape}")
    hits = x[:, None] == spec.points[None, :]
    found = hits.any(axis=1)
    if not found.all():
        bad = int(np.nonzero(~found)[0][0])
        raise InvalidArgumentError(f"symbol {x[bad]!r} at position {bad} is off-constellation")
    return bits_from_indices(hits.argmax(axis=1), spec)


def hard_decision(estimates, spec: ConstellationSpec) -> np.ndarray:
    """Nearest constellation point per estimate; ties go to the lowest label."""
    est = np.asarray(estimates, dtype=np.complex128)
    d2 = np.abs(est[..., None] - spec.points) ** 2
    return spec.points[d2.argmin(axis=-1)]


# --------------------------------------------------------------------------
# domain change
# --------------------------------------------------------------------------

def modulate(x, cfg: OtfsFrameConfig) -> np.ndarray:
    """Delay-Doppler symbol vector -> time-domain samples (unitary)."""
    x = _check_vector(x, cfg.mn, "modulate input")
    grid = x.reshape((cfg.M, cfg.N), order="F")
    return np.fft.ifft(grid, axis=1, norm="ortho").reshape(cfg.mn, order="F")


def demodulate(y_t, cfg: OtfsFrameConfig) -> np.ndarray:
    """Time-domain samples -> delay-Doppler vector (adjoint of modulate)."""
    y_t = _check_vector(y_t, cfg.mn, "demodulate input")
    grid = y_t.reshape((cfg.M, cfg.N), order="F")
    return np.fft.fft(grid, axis=1, norm="ortho").reshape(cfg.mn, order="F")


def random_bits(rng: np.random.Generator, count: int) -> np.ndarray:
    """Fair coin flips as an int8 array (harness convenience)."""
    return rng.integers(0, 2, size=count, dtype=np.int8)
