"""Flat ``key = value`` run configuration with presets.

Lines are ``key = value``; ``#`` starts a comment; scatterers are given as
repeated ``scatterer = x_m, z_m, c, beta`` lines (beta may be omitted).
Sweep ranges are ``start:stop:step`` in pixel indices with an inclusive stop.
"""

from dataclasses import dataclass, fields, replace
import math

from ..errors import ConfigError, ScatMcrbError
from ..model import (Medium, Pulse, RoiGrid, Scatterer, Scenario, TransducerRing,
                     build_frequency_grid)

MODELS = ("helmholtz", "born", "delay")


@dataclass(frozen=True)
class RunConfig:
    c0: float = 6400.0
    beta0: float = 0.0
    fs: float = 40e6
    nt: int = 601
    alpha: float = 4.67e6 ** 2
    fc: float = 4.55e6
    phase: float = -2.61
    n_transducers: int = 32
    ring_radius: float = None  # default 10 wavelengths
    grid_nx: int = 81
    grid_nz: int = 81
    grid_dx: float = None  # default lambda0 / 8
    grid_dz: float = None
    cell_area: float = None  # default grid_dx * grid_dz
    f_min: float = 0.25e6
    f_max: float = 10.65e6
    n_bins: int = 161
    noise_var: float = 3.0
    model: str = "helmholtz"
    scatterers: tuple = ()
    sweep_ix: tuple = (56,)
    sweep_iz: tuple = (36,)
    n_realizations: int = 200
    seed: int = 20240601
    trace_tx: int = 0
    trace_rx: int = None  # default: same element (pulse-echo)

    @property
    def wavelength(self):
        return self.c0 / self.fc

    def resolved_scatterers(self):
        if self.scatterers:
            return tuple(Scatterer((s[0], s[1]), s[2], s[3]) for s in self.scatterers)
        grid = self.build_grid()
        return (Scatterer(grid.pixel_position(56, 36), 1500.0),
                Scatterer((0.0, 0.0), 1500.0))

    def build_grid(self):
        lam = self.wavelength
        dx = self.grid_dx if self.grid_dx is not None else lam / 8
        dz = self.grid_dz if self.grid_dz is not None else lam / 8
        return RoiGrid(self.grid_nz, self.grid_nx, dz, dx)

    def build_scenario(self):
        try:
            medium = Medium(self.c0, self.beta0)
            pulse = Pulse(self.fs, self.nt, self.alpha, self.fc, self.phase)
            radius = self.ring_radius if self.ring_radius is not None else 10 * self.wavelength
            ring = TransducerRing(self.n_transducers, radius)
            freqs = build_frequency_grid(self.fs, self.nt, self.f_min, self.f_max, self.n_bins)
            return Scenario(medium, ring, pulse, freqs, self.noise_var, self.build_grid(),
                            self.cell_area)
        except ConfigError:
            raise
        except (ScatMcrbError, ValueError) as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc

    @property
    def receiver(self):
        if self.trace_rx is not None:
            return self.trace_rx
        return self.trace_tx

    def sweep_pixels(self):
        return [(ix, iz) for iz in self.sweep_iz for ix in self.sweep_ix]


PRESETS = {
    "paper": {},
    "desk": {
        "n_transducers": 16,
        "f_min": 3.18e6,
        "f_max": 5.9e6,
        "n_bins": 41,
        "sweep_ix": tuple(range(8, 73, 8)),
        "sweep_iz": (36,),
        "n_realizations": 200,
    },
}

_FLOAT_KEYS = {"c0", "beta0", "fs", "alpha", "fc", "phase", "ring_radius", "grid_dx",
               "grid_dz", "cell_area", "f_min", "f_max", "noise_var"}
_INT_KEYS = {"nt", "n_transducers", "grid_nx", "grid_nz", "n_bins", "n_realizations",
             "seed", "trace_tx", "trace_rx"}
_RANGE_KEYS = {"sweep_ix", "sweep_iz"}
_OPTIONAL = {"ring_radius", "grid_dx", "grid_dz", "cell_area", "n_bins", "trace_rx"}
KNOWN_KEYS = _FLOAT_KEYS | _INT_KEYS | _RANGE_KEYS | {"model", "scatterer"}


def _parse_float(text, key, line):
    try:
        val = float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got '{text}'", key, line) from None
    if not math.isfinite(val):
        raise ConfigError(f"value must be finite, got '{text}'", key, line)
    return val


def _parse_int(text, key, line):
    try:
        return int(text, 0)
    except ValueError:
        raise ConfigError(f"expected an integer, got '{text}'", key, line) from None


def _parse_range(text, key, line):
    parts = [p.strip() for p in text.split(":")]
    if len(parts) == 1:
        return (_parse_int(parts[0], key, line),)
    if len(parts) not in (2, 3):
        raise ConfigError(f"expected start:stop[:step], got '{text}'", key, line)
    start = _parse_int(parts[0], key, line)
    stop = _parse_int(parts[1], key, line)
    step = _parse_int(parts[2], key, line) if len(parts) == 3 else 1
    if step <= 0 or stop < start:
        raise ConfigError(f"empty or descending range '{text}'", key, line)
    return tuple(range(start, stop + 1, step))


def _parse_scatterer(text, line):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) not in (3, 4):
        raise ConfigError("scatterer needs 'x, z, c[, beta]'", "scatterer", line)
    vals = [_parse_float(p, "scatterer", line) for p in parts]
    if len(vals) == 3:
        vals.append(0.0)
    if vals[2] <= 0:
        raise ConfigError("scatterer speed of sound must be positive", "scatterer", line)
    if vals[3] != 0:
        raise ConfigError("attenuating scatterers are not supported", "scatterer", line)
    return tuple(vals)


def parse_config(text, preset=None):
    """Parse configuration text on top of the defaults (and ``preset``, if given)."""
    base = RunConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}'")
        base = replace(base, **PRESETS[preset])
    values = {}
    lines = {}
    scatterers = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError("expected 'key = value'", None, lineno)
        key, val = (part.strip() for part in body.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError("unknown key", key, lineno)
        if key == "scatterer":
            scatterers.append(_parse_scatterer(val, lineno))
            continue
        if key in values:
            raise ConfigError("duplicate key", key, lineno)
        lines[key] = lineno
        if key in _OPTIONAL and val.lower() in ("none", "default"):
            values[key] = None
        elif key in _FLOAT_KEYS:
            values[key] = _parse_float(val, key, lineno)
        elif key in _INT_KEYS:
            values[key] = _parse_int(val, key, lineno)
        elif key in _RANGE_KEYS:
            values[key] = _parse_range(val, key, lineno)
        else:
            if val not in MODELS:
                raise ConfigError(f"model must be one of {', '.join(MODELS)}", key, lineno)
            values[key] = val
    if scatterers:
        values["scatterers"] = tuple(scatterers)
    cfg = replace(base, **values)
    validate(cfg, lines)
    return cfg


def validate(cfg, lines=None):
    """Check cross-key constraints; errors name the offending key."""
    lines = lines or {}

    def fail(msg, key):
        raise ConfigError(msg, key, lines.get(key))

    if cfg.noise_var < 0:
        fail("noise variance must be non-negative", "noise_var")
    if cfg.c0 <= 0:
        fail("background speed of sound must be positive", "c0")
    if cfg.beta0 != 0:
        fail("only non-attenuating backgrounds (beta0 = 0) are supported", "beta0")
    if cfg.n_transducers < 2:
        fail("need at least two transducers", "n_transducers")
    if cfg.nt <= 0:
        fail("nt must be positive", "nt")
    if cfg.alpha <= 0:
        fail("alpha must be positive", "alpha")
    if not 0 < cfg.fc < cfg.fs / 2:
        fail("carrier must satisfy 0 < fc < fs/2", "fc")
    if cfg.n_bins is not None and cfg.n_bins < 1:
        fail("n_bins must be positive", "n_bins")
    if not 0 <= cfg.f_min < cfg.f_max < cfg.fs / 2:
        fail("need 0 <= f_min < f_max < fs/2", "f_max" if "f_max" in lines else "f_min")
    for key in ("ring_radius", "grid_dx", "grid_dz", "cell_area"):
        val = getattr(cfg, key)
        if val is not None and val <= 0:
            fail(f"{key} must be positive", key)
    if cfg.grid_nx < 1 or cfg.grid_nz < 1:
        fail("grid must have at least one pixel", "grid_nx")
    if cfg.n_realizations < 2:
        fail("need at least two realizations", "n_realizations")
    if any(ix < 0 or ix >= cfg.grid_nx for ix in cfg.sweep_ix):
        fail("sweep column outside the ROI", "sweep_ix")
    if any(iz < 0 or iz >= cfg.grid_nz for iz in cfg.sweep_iz):
        fail("sweep row outside the ROI", "sweep_iz")
    if not 0 <= cfg.trace_tx < cfg.n_transducers:
        fail("trace transmitter index out of range", "trace_tx")
    if cfg.trace_rx is not None and not 0 <= cfg.trace_rx < cfg.n_transducers:
        fail("trace receiver index out of range", "trace_rx")
    if not 0 <= cfg.seed < 2 ** 64:
        fail("seed must be an unsigned 64-bit integer", "seed")
    grid = cfg.build_grid()
    radius = cfg.ring_radius if cfg.ring_radius is not None else 10 * cfg.wavelength
    for s in cfg.scatterers:
        if not grid.contains((s[0], s[1])):
            fail("scatterer outside the ROI", "scatterer")
        if math.hypot(s[0], s[1]) >= radius:
            fail("scatterer outside the transducer ring", "scatterer")
    return cfg


def config_keys():
    return sorted(f.name for f in fields(RunConfig))
