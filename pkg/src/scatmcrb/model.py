"""Immutable scenario description: medium, transducer ring, pulse, frequency grid,
ROI grid, and the true/assumed parameter vectors.

Data ordering used everywhere: a measurement vector of length
``N = n_freq * M_T * M_R`` is laid out with linear index
``n = k_idx * (M_T * M_R) + t * M_R + r``, i.e. a C-ordered
``(n_freq, M_T, M_R)`` cube.
"""

from dataclasses import dataclass
from functools import cached_property
import math

import numpy as np

from .errors import ConfigError, DomainError, GeometryError

__all__ = [
    "Medium", "Scatterer", "TransducerRing", "Pulse", "FrequencyGrid", "RoiGrid",
    "Scenario", "TrueParams", "AssumedParams", "FieldData",
    "contrast_gamma", "pulse_spectrum", "build_frequency_grid", "noise_sample",
    "derive_seed", "wrap_phase",
]


@dataclass(frozen=True)
class Medium:
    """Homogeneous background. ``beta0`` is attenuation per unit angular frequency."""

    c0: float = 6400.0
    beta0: float = 0.0

    def __post_init__(self):
        if not self.c0 > 0:
            raise DomainError(f"c0 must be positive, got {self.c0}")
        if not self.beta0 >= 0:
            raise DomainError(f"beta0 must be non-negative, got {self.beta0}")

    def wavenumber(self, omega):
        """Real background wavenumber ``omega / c0``."""
        if self.beta0 != 0.0:
            raise DomainError("attenuating backgrounds (beta0 > 0) are not supported")
        return np.asarray(omega, dtype=float) / self.c0


def contrast_gamma(c, beta, medium):
    """Frequency-flat contrast ``(1/c - j beta)^2 - (1/c0 - j beta0)^2`` [s^2/m^2]."""
    if not c > 0:
        raise DomainError(f"defect speed of sound must be positive, got {c}")
    return complex((1.0 / c - 1j * beta) ** 2 - (1.0 / medium.c0 - 1j * medium.beta0) ** 2)


@dataclass(frozen=True)
class Scatterer:
    position: tuple
    c: float
    beta: float = 0.0

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 2 or not all(math.isfinite(v) for v in pos):
            raise GeometryError(f"scatterer position must be a finite 2-vector, got {self.position}")
        object.__setattr__(self, "position", pos)
        if not self.c > 0:
            raise DomainError(f"scatterer speed of sound must be positive, got {self.c}")

    def gamma(self, medium):
        return contrast_gamma(self.c, self.beta, medium)


@dataclass(frozen=True)
class TransducerRing:
    """``count`` elements on a circle; element m sits at angle 2*pi*m/count."""

    count: int
    radius: float

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 2:
            raise GeometryError(f"ring needs at least 2 elements, got {self.count}")
        if not self.radius > 0:
            raise GeometryError(f"ring radius must be positive, got {self.radius}")

    @cached_property
    def positions(self):
        ang = 2.0 * np.pi * np.arange(self.count) / self.count
        pos = self.radius * np.column_stack([np.cos(ang), np.sin(ang)])
        pos.setflags(write=False)
        return pos


@dataclass(frozen=True)
class Pulse:
    """Modulated Gaussian (Gabor) excitation, parameterised in Hz."""

    fs: float = 40e6
    nt: int = 601
    alpha: float = 4.67e6 ** 2
    fc: float = 4.55e6
    phase: float = -2.61

    def __post_init__(self):
        if not self.fs > 0:
            raise DomainError("fs must be positive")
        if int(self.nt) != self.nt or self.nt <= 0:
            raise DomainError("nt must be a positive integer")
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")
        if not 0 < self.fc < self.fs / 2:
            raise DomainError("carrier must satisfy 0 < fc < fs/2")

    def spectrum(self, f):
        return pulse_spectrum(f, self)


def pulse_spectrum(f, pulse):
    """``(fs/2) sqrt(pi/alpha) exp(-pi^2/alpha (f - fc)^2 + j phase)``; broadcasts over f."""
    f = np.asarray(f, dtype=float)
    amp = 0.5 * pulse.fs * np.sqrt(np.pi / pulse.alpha)
    return amp * np.exp(-(np.pi ** 2) / pulse.alpha * (f - pulse.fc) ** 2 + 1j * pulse.phase)


@dataclass(frozen=True)
class FrequencyGrid:
    """Contiguous DFT bins ``k_min..k_max`` of a length-``nt`` record sampled at ``fs``."""

    k_min: int
    k_max: int
    fs: float
    nt: int

    def __post_init__(self):
        if self.k_max < self.k_min or self.k_min < 0:
            raise ConfigError(f"empty frequency band k={self.k_min}..{self.k_max}")

    @property
    def bin_indices(self):
        return np.arange(self.k_min, self.k_max + 1)

    @property
    def size(self):
        return self.k_max - self.k_min + 1

    @property
    def frequencies(self):
        return self.bin_indices * (self.fs / self.nt)

    @property
    def omegas(self):
        return 2.0 * np.pi * self.frequencies


def build_frequency_grid(fs, nt, f_min, f_max, n_bins=None):
    """Select contiguous bins of width ``fs/nt``.

    Without ``n_bins`` every bin inside ``[f_min, f_max]`` is kept. With
    ``n_bins`` the band starts at the first bin at or above ``f_min`` and
    extends for exactly ``n_bins`` bins, even if the last ones pass ``f_max``
    (this is how the 161-bin reference band is reproduced).
    """
    if not (0 <= f_min < f_max < fs / 2):
        raise ConfigError(f"need 0 <= f_min < f_max < fs/2, got [{f_min}, {f_max}] with fs={fs}")
    df = fs / nt
    # tolerance keeps bins that sit exactly on a band edge
    k_min = int(math.ceil(f_min / df - 1e-9))
    if n_bins is None:
        k_max = int(math.floor(f_max / df + 1e-9))
    else:
        if int(n_bins) != n_bins or n_bins < 1:
            raise ConfigError(f"n_bins must be a positive integer, got {n_bins}")
        k_max = k_min + int(n_bins) - 1
        if k_max * df >= fs / 2:
            raise ConfigError(f"{n_bins} bins from k={k_min} exceed the Nyquist frequency")
    if k_max < k_min:
        raise ConfigError(f"no frequency bin inside [{f_min}, {f_max}]")
    return FrequencyGrid(k_min, k_max, float(fs), int(nt))


@dataclass(frozen=True)
class RoiGrid:
    """Regular ROI grid centred on the origin. Pixel (ix, iz) sits at
    ``((ix - (nx-1)/2) dx, (iz - (nz-1)/2) dz)``."""

    nz: int
    nx: int
    dz: float
    dx: float

    @property
    def cell_area(self):
        return self.dx * self.dz

    def pixel_position(self, ix, iz):
        return ((ix - 0.5 * (self.nx - 1)) * self.dx, (iz - 0.5 * (self.nz - 1)) * self.dz)

    def contains(self, point):
        hx = 0.5 * (self.nx - 1) * self.dx
        hz = 0.5 * (self.nz - 1) * self.dz
        x, z = point
        tol = 1e-9 * max(hx, hz)
        return abs(x) <= hx + tol and abs(z) <= hz + tol


@dataclass(frozen=True)
class Scenario:
    """Everything fixed during an experiment besides the scatterers.

    ``cell_area`` is the quadrature weight attached to each point scatterer in
    the contrast-source integral; ``None`` means one ROI cell ``dx * dz``.
    """

    medium: Medium
    ring: TransducerRing
    pulse: Pulse
    freqs: FrequencyGrid
    noise_var: float
    grid: RoiGrid
    cell_area: float = None

    def __post_init__(self):
        if not self.noise_var >= 0:
            raise DomainError(f"noise variance must be non-negative, got {self.noise_var}")
        if self.freqs.fs != self.pulse.fs or self.freqs.nt != self.pulse.nt:
            raise ConfigError("frequency grid and pulse disagree on fs/nt")
        if self.cell_area is None:
            object.__setattr__(self, "cell_area", self.grid.cell_area)

    @classmethod
    def reference(cls, n_transducers=32, n_bins=161, f_min=0.25e6, f_max=10.65e6,
                  noise_var=3.0, nt=601):
        """Default ultrasound NDT setting: steel-like background, 10 wavelength ring."""
        medium = Medium()
        pulse = Pulse(nt=nt)
        lam = medium.c0 / pulse.fc
        return cls(
            medium=medium,
            ring=TransducerRing(n_transducers, 10.0 * lam),
            pulse=pulse,
            freqs=build_frequency_grid(pulse.fs, pulse.nt, f_min, f_max, n_bins),
            noise_var=noise_var,
            grid=RoiGrid(81, 81, lam / 8, lam / 8),
        )

    @property
    def wavelength(self):
        return self.medium.c0 / self.pulse.fc

    @property
    def n_freq(self):
        return self.freqs.size

    @property
    def n_elements(self):
        return self.ring.count

    @property
    def n_data(self):
        return self.n_freq * self.ring.count ** 2

    @property
    def data_shape(self):
        m = self.ring.count
        return (self.n_freq, m, m)

    def linear_index(self, k_idx, t, r):
        m = self.ring.count
        return (k_idx * m + t) * m + r

    def unravel_index(self, n):
        return np.unravel_index(n, self.data_shape)

    def with_noise(self, noise_var):
        return Scenario(self.medium, self.ring, self.pulse, self.freqs, noise_var,
                        self.grid, self.cell_area)


@dataclass(frozen=True, eq=False)
class FieldData:
    """Complex measurement vector with the (freq, tx, rx) ordering contract."""

    values: np.ndarray
    shape: tuple

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex).reshape(-1)
        if vals.size != int(np.prod(self.shape)):
            raise ValueError(f"{vals.size} values do not fit shape {self.shape}")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    @classmethod
    def from_cube(cls, cube):
        cube = np.asarray(cube, dtype=complex)
        return cls(cube.reshape(-1), cube.shape)

    def cube(self):
        return self.values.reshape(self.shape)

    def __len__(self):
        return self.values.size

    def energy(self):
        return float(np.sum(np.abs(self.values) ** 2))

    def slice_pair(self, t, r):
        """Spectrum over frequency for one transmitter/receiver pair."""
        return self.cube()[:, t, r]


def _as_vector(data):
    return data.values if isinstance(data, FieldData) else np.asarray(data, dtype=complex).reshape(-1)


def wrap_phase(phase):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(phase, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class TrueParams:
    """True model parameters: locations and complex contrasts.

    Vector layout ``[x_1, z_1, ..., x_U, z_U, |g_1|..|g_U|, arg g_1..arg g_U]``.
    """

    positions: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        gam = np.array(self.gamma, dtype=complex).reshape(-1)
        if gam.size != pos.shape[0]:
            raise GeometryError("need one contrast per scatterer")
        pos.setflags(write=False)
        gam.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "gamma", gam)

    @classmethod
    def from_scatterers(cls, scatterers, medium):
        return cls([s.position for s in scatterers], [s.gamma(medium) for s in scatterers])

    @property
    def n_scatterers(self):
        return self.positions.shape[0]

    def to_vector(self):
        return np.concatenate([self.positions.reshape(-1), np.abs(self.gamma), np.angle(self.gamma)])

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.size % 4:
            raise ValueError("parameter vector length must be 4U")
        u = vec.size // 4
        gam = vec[2 * u:3 * u] * np.exp(1j * vec[3 * u:])
        return cls(vec[:2 * u].reshape(u, 2), gam)

    def scaled(self, factor):
        return TrueParams(self.positions, self.gamma * factor)


@dataclass(frozen=True, eq=False)
class AssumedParams:
    """Delay-model parameters: locations and scattering coefficients a*exp(j theta).

    Vector layout ``[x_1, z_1, ..., x_U, z_U, a_1..a_U, theta_1..theta_U]``.
    """

    positions: np.ndarray
    amplitudes: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        amp = np.array(self.amplitudes, dtype=float).reshape(-1)
        ph = np.array(self.phases, dtype=float).reshape(-1)
        if not (amp.size == ph.size == pos.shape[0]):
            raise GeometryError("need one amplitude and phase per scatterer")
        for arr in (pos, amp, ph):
            arr.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "amplitudes", amp)
        object.__setattr__(self, "phases", ph)

    @classmethod
    def from_coefficients(cls, positions, q):
        q = np.asarray(q, dtype=complex)
        return cls(positions, np.abs(q), np.angle(q))

    @property
    def n_scatterers(self):
        return self.positions.shape[0]

    @property
    def q(self):
        return self.amplitudes * np.exp(1j * self.phases)

    def to_vector(self):
        return np.concatenate([self.positions.reshape(-1), self.amplitudes, self.phases])

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.size % 4:
            raise ValueError("parameter vector length must be 4U")
        u = vec.size // 4
        return cls(vec[:2 * u].reshape(u, 2), vec[2 * u:3 * u], vec[3 * u:])

    def canonical(self):
        """Same coefficients with a_u >= 0 and theta_u in (-pi, pi]."""
        neg = self.amplitudes < 0
        return AssumedParams(self.positions, np.abs(self.amplitudes),
                             wrap_phase(self.phases + np.where(neg, np.pi, 0.0)))


def location_indices(n_scatterers):
    """Indices of the location block (first 2U entries)."""
    return list(range(2 * n_scatterers))


def parameter_difference(a, b):
    """``a - b`` for assumed-parameter vectors with phase entries wrapped."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = a - b
    u = d.size // 4
    d[3 * u:] = wrap_phase(d[3 * u:])
    return d


def noise_sample(n, sigma2, seed):
    """Circular complex Gaussian CN(0, sigma2 I); deterministic in ``seed``."""
    if n <= 0:
        raise ValueError("noise length must be positive")
    if sigma2 < 0:
        raise DomainError("noise variance must be non-negative")
    rng = np.random.default_rng(seed)
    re = rng.standard_normal(n)
    im = rng.standard_normal(n)
    return np.sqrt(0.5 * sigma2) * (re + 1j * im)


def derive_seed(master, index):
    """Per-task 64-bit seed: numpy SeedSequence over ``(master, index)``."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
