"""Real periodic fields on the unit circle in a dual grid/Fourier representation.

A :class:`PeriodicField` keeps the complex Fourier coefficients ``a_n`` for
``0 <= n <= n_modes`` (negative modes follow from Hermitian symmetry), so that

    f(s) = sum_{|n| <= n_modes} a_n exp(2 pi i n s),    s in [0, 1).

The collocation grid has ``N = 2 (n_modes + 1)`` points ``s_j = j / N``; the
Nyquist coefficient is never retained.  Nonlinear expressions are evaluated on
a grid that is ``OVERSAMPLE`` times finer and truncated back to the band.
"""

import warnings

import numpy as np

from .errors import MeanNotZero, UnderResolvedWarning

DEFAULT_GRID = 512
DEFAULT_MODES = DEFAULT_GRID // 2 - 1
OVERSAMPLE = 4

# smoothness monitor: fraction of retained modes treated as "top of band"
MONITOR_TOP_FRACTION = 0.1
MONITOR_THRESHOLD = 1e-8
# absolute floor so roundoff-level fields do not trip the monitor
MONITOR_FLOOR = 1e-26


class PeriodicField:
    """Real scalar field on R/Z stored by its nonnegative Fourier coefficients."""

    __slots__ = ("_coeffs",)

    def __init__(self, coeffs):
        a = np.array(coeffs, dtype=complex)
        if a.ndim != 1 or a.size < 2:
            raise ValueError("need a 1-D coefficient array with at least two entries")
        a[0] = a[0].real
        a.setflags(write=False)
        self._coeffs = a

    # -- constructors -----------------------------------------------------

    @classmethod
    def from_values(cls, values, n_modes=None):
        """Build from samples on a uniform grid ``s_j = j / len(values)``."""
        values = np.asarray(values, dtype=float)
        size = values.size
        if n_modes is None:
            n_modes = size // 2 - 1
        fcoef = np.fft.rfft(values) / size
        out = np.zeros(n_modes + 1, dtype=complex)
        keep = min(n_modes + 1, size // 2 if size % 2 == 0 else size // 2 + 1)
        out[:keep] = fcoef[:keep]
        return cls(out)

    @classmethod
    def from_function(cls, func, n_modes=DEFAULT_MODES):
        """Sample ``func`` on the oversampled grid and project onto the band."""
        size = OVERSAMPLE * 2 * (n_modes + 1)
        s = np.arange(size) / size
        return cls.from_values(func(s), n_modes=n_modes)

    @classmethod
    def zeros(cls, n_modes=DEFAULT_MODES):
        return cls(np.zeros(n_modes + 1, dtype=complex))

    @classmethod
    def constant(cls, value, n_modes=DEFAULT_MODES):
        a = np.zeros(n_modes + 1, dtype=complex)
        a[0] = value
        return cls(a)

    @classmethod
    def fourier_mode(cls, n, amplitude=1.0, kind="cos", n_modes=DEFAULT_MODES):
        """``amplitude * cos(2 pi n s)`` (or ``sin``) for ``0 < n <= n_modes``."""
        n = abs(int(n))
        a = np.zeros(n_modes + 1, dtype=complex)
        if n == 0:
            a[0] = amplitude if kind == "cos" else 0.0
        elif kind == "cos":
            a[n] = amplitude / 2
        elif kind == "sin":
            a[n] = -0.5j * amplitude
        else:
            raise ValueError(f"unknown mode kind {kind!r}")
        return cls(a)

    # -- basic properties -------------------------------------------------

    @property
    def coeffs(self):
        return self._coeffs

    @property
    def n_modes(self):
        return self._coeffs.size - 1

    @property
    def grid_size(self):
        return 2 * (self.n_modes + 1)

    @property
    def fine_size(self):
        return OVERSAMPLE * self.grid_size

    @property
    def grid(self):
        return np.arange(self.grid_size) / self.grid_size

    @property
    def values(self):
        return self.sample(self.grid_size)

    @property
    def mean(self):
        return float(self._coeffs[0].real)

    def sample(self, size):
        """Evaluate on ``size`` equispaced points; ``size`` must hold the band."""
        if size < self.grid_size:
            raise ValueError(f"grid of {size} points cannot hold {self.n_modes} modes")
        padded = np.zeros(size // 2 + 1, dtype=complex)
        padded[: self.n_modes + 1] = self._coeffs
        return np.fft.irfft(padded, n=size) * size

    def fine_values(self):
        return self.sample(self.fine_size)

    def coefficient(self, n):
        """``a_n`` for any signed ``n`` (zero outside the band)."""
        if abs(n) > self.n_modes:
            return 0j
        a = self._coeffs[abs(n)]
        return complex(a if n >= 0 else np.conj(a))

    def full_spectrum(self):
        """Return ``(n, a_n)`` for ``-n_modes <= n <= n_modes``."""
        n = np.arange(-self.n_modes, self.n_modes + 1)
        a = np.concatenate([np.conj(self._coeffs[:0:-1]), self._coeffs])
        return n, a

    def max_abs(self):
        return float(np.max(np.abs(self.values)))

    def l2_norm(self):
        return float(np.sqrt(sobolev_seminorm_sq(self, 0)))

    def with_modes(self, n_modes):
        """Truncate or zero-pad to a different band."""
        out = np.zeros(n_modes + 1, dtype=complex)
        keep = min(n_modes, self.n_modes) + 1
        out[:keep] = self._coeffs[:keep]
        return PeriodicField(out)

    def without_mean(self):
        a = self._coeffs.copy()
        a[0] = 0.0
        return PeriodicField(a)

    # -- arithmetic -------------------------------------------------------

    def _check(self, other):
        if other.n_modes != self.n_modes:
            raise ValueError(f"band mismatch: {self.n_modes} vs {other.n_modes}")

    def __add__(self, other):
        if isinstance(other, PeriodicField):
            self._check(other)
            return PeriodicField(self._coeffs + other._coeffs)
        a = self._coeffs.copy()
        a[0] += float(other)
        return PeriodicField(a)

    __radd__ = __add__

    def __neg__(self):
        return PeriodicField(-self._coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, PeriodicField):
            return product(self, other)
        return PeriodicField(self._coeffs * float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return PeriodicField(self._coeffs / float(other))

    def __repr__(self):
        return f"PeriodicField(n_modes={self.n_modes}, mean={self.mean:.6g})"

    def __eq__(self, other):
        return isinstance(other, PeriodicField) and np.array_equal(self._coeffs, other._coeffs)

    __hash__ = None


def wavenumbers(n_modes):
    """Angular wavenumbers ``2 pi n`` for ``n = 0..n_modes``."""
    return 2 * np.pi * np.arange(n_modes + 1)


def derivative(f, order=1):
    """``D^order f``: multiply the spectrum by ``(2 pi i n)^order``."""
    if order < 0:
        raise ValueError("derivative order must be nonnegative")
    if order == 0:
        return f
    symbol = (1j * wavenumbers(f.n_modes)) ** order
    return PeriodicField(f.coeffs * symbol)


def mean_zero_primitive(f):
    """Unique mean-zero ``g`` with ``g' = f``; ``f`` must have zero mean."""
    scale = f.max_abs()
    if abs(f.coeffs[0]) > 1e-12 * scale:
        raise MeanNotZero(f"mean {f.mean:.3e} exceeds 1e-12 * max|f| = {1e-12 * scale:.3e}")
    a = np.zeros_like(f.coeffs)
    a[1:] = f.coeffs[1:] / (1j * wavenumbers(f.n_modes)[1:])
    return PeriodicField(a)


def fine_to_field(values, n_modes):
    """Project real samples from any grid that holds ``n_modes`` onto the band."""
    return PeriodicField.from_values(values, n_modes=n_modes)


def pointwise(func, *fields):
    """Evaluate ``func`` of several fields on the oversampled grid and truncate.

    All fields must share ``n_modes``.  ``func`` receives the oversampled real
    sample arrays and returns a real array of the same length.
    """
    first = fields[0]
    for f in fields[1:]:
        first._check(f)
    arrays = [f.fine_values() for f in fields]
    return fine_to_field(func(*arrays), first.n_modes)


def product(f, g):
    """Dealiased pointwise product ``f * g``."""
    return pointwise(np.multiply, f, g)


def integrate(f):
    """Spectral quadrature of ``f`` over one period (equals ``a_0``)."""
    return f.mean


def sobolev_seminorm_sq(f, p):
    """``int (D^p f)^2 ds = sum_n (2 pi n)^(2p) |a_n|^2``."""
    a2 = np.abs(f.coeffs) ** 2
    weights = wavenumbers(f.n_modes) ** (2 * p)
    total = 2.0 * np.sum(weights[1:] * a2[1:])
    if p == 0:
        total += a2[0]
    return float(total)


def top_band_fraction(f, fraction=MONITOR_TOP_FRACTION):
    """Share of the fluctuation energy carried by the top ``fraction`` of modes.

    Returns ``(ratio, top_energy)``; ``ratio`` is 0 for a constant field.
    """
    a2 = np.abs(f.coeffs[1:]) ** 2
    total = float(np.sum(a2))
    cut = int(np.ceil((1.0 - fraction) * f.n_modes))
    top = float(np.sum(a2[max(cut - 1, 0):]))
    if total == 0.0:
        return 0.0, 0.0
    return top / total, top


def is_resolved(f, threshold=MONITOR_THRESHOLD, floor=MONITOR_FLOOR):
    """``False`` when the top band carries more than ``threshold`` of the
    fluctuation energy and more than ``floor`` in absolute terms."""
    ratio, top = top_band_fraction(f)
    return not (ratio > threshold and top > floor)


def check_resolution(f, threshold=MONITOR_THRESHOLD, name="field"):
    """Warn when the top of the band is not spectrally negligible."""
    ok = is_resolved(f, threshold)
    if not ok:
        ratio, _ = top_band_fraction(f)
        warnings.warn(
            f"{name}: top {MONITOR_TOP_FRACTION:.0%} of modes carry {ratio:.2e} of the energy",
            UnderResolvedWarning,
            stacklevel=2,
        )
    return ok
