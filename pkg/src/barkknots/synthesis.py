"""Closed-form bark surface and internal density of parametric logs.

Coordinates are cylindrical about the pith: ``r`` (radial distance),
``theta`` (azimuth, radians) and ``z`` (height above the log base).  All
evaluators accept numpy arrays and broadcast their arguments.

The surface radius at ``(theta, z)`` is the tapered radius modulated by a
low- and a high-frequency azimuthal cosine plus a slow longitudinal cosine,
with a 2D Gaussian bump wherever a knot exits through the bark.  Inside the
bark the density is a background level with a small growth-ring
modulation; a point belongs to a knot when it is within the tube radius
``core_radius + growth_rate * r`` of the knot centre line point at the same
radius, ``(r, azimuth, start_height + rise_sqrt*sqrt(r) + rise_lin*r)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError

TWO_PI = 2.0 * math.pi
MANIFEST_VERSION = 1
K_MIN, K_MAX = 2, 7


def wrap_angle(a):
    """Map angles to ``[-pi, pi)``."""
    return np.mod(np.asarray(a, dtype=float) + math.pi, TWO_PI) - math.pi


@dataclass(frozen=True)
class TaperSpec:
    base_radius: float
    taper_rate: float
    height: float

    def __post_init__(self):
        if not self.base_radius > 0:
            raise DomainError(f"base_radius must be > 0, got {self.base_radius}")
        if not 0.0 <= self.taper_rate <= 0.5:
            raise DomainError(f"taper_rate must be in [0, 0.5], got {self.taper_rate}")
        if not self.height > 0:
            raise DomainError(f"height must be > 0, got {self.height}")

    def radius_at(self, z):
        return self.base_radius * (1.0 - self.taper_rate * np.asarray(z, dtype=float) / self.height)


@dataclass(frozen=True)
class BarkTextureSpec:
    amp_low: float = 0.0
    amp_high: float = 0.0
    freq_low: int = 3
    freq_high: int = 20
    phase_low: float = 0.0
    phase_high: float = 0.0
    z_amp: float = 0.0
    z_freq: float = 1.0  # cycles per unit height

    def __post_init__(self):
        for name in ("amp_low", "amp_high"):
            v = getattr(self, name)
            if not 0.0 <= v <= 0.15:
                raise DomainError(f"{name} must be in [0, 0.15], got {v}")
        if not 0.0 <= self.z_amp <= 0.05:
            raise DomainError(f"z_amp must be in [0, 0.05], got {self.z_amp}")
        if int(self.freq_low) != self.freq_low or not 2 <= self.freq_low <= 6:
            raise DomainError(f"freq_low must be an integer in [2, 6], got {self.freq_low}")
        if int(self.freq_high) != self.freq_high or not 12 <= self.freq_high <= 40:
            raise DomainError(f"freq_high must be an integer in [12, 40], got {self.freq_high}")
        if not self.amp_low + self.amp_high + self.z_amp < 0.5:
            raise DomainError("texture amplitudes must sum to less than 0.5")

    def factor(self, theta, z):
        theta = np.asarray(theta, dtype=float)
        z = np.asarray(z, dtype=float)
        return (
            1.0
            + self.amp_low * np.cos(self.freq_low * theta + self.phase_low)
            + self.amp_high * np.cos(self.freq_high * theta + self.phase_high)
            + self.z_amp * np.cos(TWO_PI * self.z_freq * z)
        )


@dataclass(frozen=True)
class RingSpec:
    background_density: float = 0.4
    ring_amp: float = 0.0
    ring_period: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.background_density < 1.0:
            raise DomainError("background_density must be in (0, 1)")
        if not 0.0 <= self.ring_amp <= 0.2 * self.background_density:
            raise DomainError("ring_amp must be in [0, 0.2 * background_density]")
        if not self.background_density + self.ring_amp < 1.0:
            raise DomainError("background_density + ring_amp must stay below 1")
        if not self.ring_period > 0:
            raise DomainError("ring_period must be > 0")

    def density(self, r):
        # modulation kept non-negative so the background is a floor
        phase = TWO_PI * np.asarray(r, dtype=float) / self.ring_period
        return self.background_density + self.ring_amp * 0.5 * (1.0 + np.cos(phase))


@dataclass(frozen=True)
class KnotSpec:
    azimuth: float
    start_height: float
    rise_sqrt: float
    rise_lin: float
    core_radius: float
    growth_rate: float
    knot_density: float
    bump_amp: float
    bump_sigma_theta: float
    bump_sigma_z: float

    def __post_init__(self):
        if not 0.0 <= self.azimuth < TWO_PI:
            raise DomainError(f"knot azimuth must be in [0, 2pi), got {self.azimuth}")
        if not self.core_radius > 0:
            raise DomainError("core_radius must be > 0")
        if not self.growth_rate >= 0:
            raise DomainError("growth_rate must be >= 0")
        if not 0.0 < self.knot_density <= 1.0:
            raise DomainError("knot_density must be in (0, 1]")
        if not self.bump_amp >= 0:
            raise DomainError("bump_amp must be >= 0")
        if not (self.bump_sigma_theta > 0 and self.bump_sigma_z > 0):
            raise DomainError("bump widths must be > 0")

    def centerline(self, r):
        """Height of the knot axis at radial distance ``r``."""
        r = np.asarray(r, dtype=float)
        return self.start_height + self.rise_sqrt * np.sqrt(r) + self.rise_lin * r

    def slope(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return self.rise_sqrt / (2.0 * np.sqrt(r)) + self.rise_lin

    def tube_radius(self, r):
        return self.core_radius + self.growth_rate * np.asarray(r, dtype=float)

    def radius_at_height(self, z):
        """Invert the centre line: radial distance where it reaches ``z``.

        Returns NaN below ``start_height``.  Only valid for monotone centre
        lines (non-negative rise coefficients).
        """
        z = np.asarray(z, dtype=float)
        dz = z - self.start_height
        a, b = self.rise_sqrt, self.rise_lin
        with np.errstate(invalid="ignore", divide="ignore"):
            if b > 0:
                s = (-a + np.sqrt(a * a + 4.0 * b * dz)) / (2.0 * b)
            else:
                s = dz / a
            r = s * s
        return np.where(dz >= 0, r, np.nan)


@dataclass(frozen=True)
class LogSpec:
    taper: TaperSpec
    texture: BarkTextureSpec = field(default_factory=BarkTextureSpec)
    rings: RingSpec = field(default_factory=RingSpec)
    knots: tuple = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "knots", tuple(self.knots))
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        for i, kn in enumerate(self.knots):
            if not kn.knot_density > self.rings.background_density:
                raise DomainError(f"knot {i}: knot_density must exceed background density")
            r_exit, z_exit = _exit_point(self, kn)
            lo = kn.start_height
            if lo < 0 or z_exit > self.taper.height:
                raise DomainError(
                    f"knot {i}: centre line leaves [0, height] before the bark "
                    f"(z from {lo:.4g} to {z_exit:.4g})"
                )

    @property
    def height(self) -> float:
        return self.taper.height

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LogSpec":
        return cls(
            taper=TaperSpec(**d["taper"]),
            texture=BarkTextureSpec(**d["texture"]),
            rings=RingSpec(**d["rings"]),
            knots=tuple(KnotSpec(**k) for k in d["knots"]),
            seed=int(d["seed"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LogSpec":
        return cls.from_dict(json.loads(text))


def _base_surface(spec: LogSpec, theta, z):
    return spec.taper.radius_at(z) * spec.texture.factor(theta, z)


def _exit_point(spec: LogSpec, knot: KnotSpec, iters: int = 60):
    """Radius and height where the knot centre line meets the bare bark."""
    r = spec.taper.base_radius
    for _ in range(iters):
        z = float(np.clip(knot.centerline(r), 0.0, spec.taper.height))
        r_new = float(_base_surface(spec, knot.azimuth, z))
        if abs(r_new - r) < 1e-15:
            r = r_new
            break
        r = r_new
    return r, float(knot.centerline(r))


def knot_exit_points(spec: LogSpec) -> list:
    """``(r_exit, z_exit)`` for each knot, ignoring the knots' own bumps."""
    return [_exit_point(spec, kn) for kn in spec.knots]


def _check_height(spec: LogSpec, z):
    z = np.asarray(z, dtype=float)
    tol = 1e-9 * spec.taper.height
    if np.any(z < -tol) or np.any(z > spec.taper.height + tol) or np.any(np.isnan(z)):
        raise DomainError(f"z must lie in [0, {spec.taper.height}]")
    return z


def surface_radius(spec: LogSpec, theta, z, exits=None):
    """Bark radius at azimuth ``theta`` and height ``z``."""
    z = _check_height(spec, z)
    theta = np.mod(np.asarray(theta, dtype=float), TWO_PI)
    radius = _base_surface(spec, theta, z)
    if exits is None:
        exits = knot_exit_points(spec)
    for kn, (_, z_exit) in zip(spec.knots, exits):
        if kn.bump_amp == 0:
            continue
        dt = wrap_angle(theta - kn.azimuth)
        dz = z - z_exit
        radius = radius + kn.bump_amp * np.exp(
            -dt * dt / (2.0 * kn.bump_sigma_theta**2) - dz * dz / (2.0 * kn.bump_sigma_z**2)
        )
    return radius


def knot_mask(knot: KnotSpec, r, theta, z):
    """Boolean membership of points in one knot tube."""
    r = np.asarray(r, dtype=float)
    dt = wrap_angle(np.asarray(theta, dtype=float) - knot.azimuth)
    chord = 2.0 * r * np.sin(0.5 * np.abs(dt))
    dz = np.asarray(z, dtype=float) - knot.centerline(r)
    rho = knot.tube_radius(r)
    return chord * chord + dz * dz <= rho * rho


def density_at(spec: LogSpec, r, theta, z, exits=None):
    """Internal density; exactly 0 outside the bark or outside ``[0, height]``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("r must be >= 0")
    theta = np.asarray(theta, dtype=float)
    z = np.asarray(z, dtype=float)
    r, theta, z = np.broadcast_arrays(r, theta, z)
    in_range = (z >= 0.0) & (z <= spec.taper.height)
    zc = np.clip(z, 0.0, spec.taper.height)
    if exits is None:
        exits = knot_exit_points(spec)
    bark = surface_radius(spec, theta, zc, exits=exits)
    inside = in_range & (r <= bark)
    d = spec.rings.density(r)
    for kn in spec.knots:
        m = knot_mask(kn, r, theta, zc)
        d = np.where(m, np.maximum(d, kn.knot_density), d)
    return np.where(inside, d, 0.0)


def rotate_spec(spec: LogSpec, delta: float) -> LogSpec:
    """Spec whose fields at ``theta + delta`` equal ``spec``'s at ``theta``."""
    tex = spec.texture
    tex = replace(
        tex,
        phase_low=tex.phase_low - tex.freq_low * delta,
        phase_high=tex.phase_high - tex.freq_high * delta,
    )
    knots = tuple(replace(k, azimuth=float(np.mod(k.azimuth + delta, TWO_PI)) % TWO_PI) for k in spec.knots)
    return replace(spec, texture=tex, knots=knots)


# ----------------------------------------------------------------------------
# randomisation


@dataclass(frozen=True)
class SynthConfig:
    """Parameter ranges for random logs.  Bump ``version`` on any change."""

    version: str = "1"
    height: float = 2.4
    base_radius: tuple = (0.75, 0.95)
    taper_rate: tuple = (0.02, 0.15)
    amp_low: tuple = (0.005, 0.02)
    freq_low: tuple = (2, 6)
    amp_high: tuple = (0.001, 0.004)
    freq_high: tuple = (12, 40)
    z_amp: tuple = (0.0, 0.01)
    z_freq: tuple = (0.2, 1.0)
    background_density: tuple = (0.3, 0.45)
    ring_amp_fraction: tuple = (0.0, 0.1)
    ring_period: tuple = (0.04, 0.1)
    min_azimuth_gap: float = math.pi / 6
    rise_sqrt: tuple = (0.05, 0.2)
    rise_lin: tuple = (0.8, 1.2)
    core_radius: tuple = (0.02, 0.035)
    growth_rate: tuple = (0.02, 0.05)
    knot_density: tuple = (0.8, 1.0)
    bump_amp: tuple = (0.02, 0.05)
    bump_sigma_theta: tuple = (0.06, 0.12)
    bump_sigma_z: tuple = (0.05, 0.1)
    height_margin: float = 0.12

    def max_radius(self) -> float:
        """Upper bound of any sampled bark radius."""
        tex = self.amp_low[1] + self.amp_high[1] + self.z_amp[1]
        return self.base_radius[1] * (1.0 + tex) + self.bump_amp[1]


DEFAULT_CONFIG = SynthConfig()


def _uniform(rng, bounds):
    lo, hi = bounds
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _separated_azimuths(rng, k, gap):
    slack = TWO_PI - k * gap
    if slack < 0:
        raise DomainError(f"cannot place {k} knots {gap:.3g} rad apart")
    u = np.sort(rng.uniform(0.0, slack, size=k))
    az = u + gap * np.arange(k) + rng.uniform(0.0, TWO_PI)
    return np.sort(np.mod(az, TWO_PI))


def sample_log_spec(rng_seed: int, k: int, config: SynthConfig = DEFAULT_CONFIG) -> LogSpec:
    """Random log with exactly ``k`` knots; deterministic in ``(rng_seed, k)``."""
    if not K_MIN <= k <= K_MAX:
        raise DomainError(f"knot count must be in [{K_MIN}, {K_MAX}], got {k}")
    rng = np.random.default_rng([int(rng_seed), int(k)])
    c = config
    taper = TaperSpec(_uniform(rng, c.base_radius), _uniform(rng, c.taper_rate), c.height)
    texture = BarkTextureSpec(
        amp_low=_uniform(rng, c.amp_low),
        amp_high=_uniform(rng, c.amp_high),
        freq_low=int(rng.integers(c.freq_low[0], c.freq_low[1] + 1)),
        freq_high=int(rng.integers(c.freq_high[0], c.freq_high[1] + 1)),
        phase_low=_uniform(rng, (0.0, TWO_PI)),
        phase_high=_uniform(rng, (0.0, TWO_PI)),
        z_amp=_uniform(rng, c.z_amp),
        z_freq=_uniform(rng, c.z_freq),
    )
    bg = _uniform(rng, c.background_density)
    rings = RingSpec(bg, bg * _uniform(rng, c.ring_amp_fraction), _uniform(rng, c.ring_period))
    r_bound = c.max_radius()
    knots = []
    for az in _separated_azimuths(rng, k, c.min_azimuth_gap):
        a = _uniform(rng, c.rise_sqrt)
        b = _uniform(rng, c.rise_lin)
        rise = a * math.sqrt(r_bound) + b * r_bound
        z0 = _uniform(rng, (c.height_margin, c.height - c.height_margin - rise))
        knots.append(
            KnotSpec(
                azimuth=float(az),
                start_height=z0,
                rise_sqrt=a,
                rise_lin=b,
                core_radius=_uniform(rng, c.core_radius),
                growth_rate=_uniform(rng, c.growth_rate),
                knot_density=_uniform(rng, c.knot_density),
                bump_amp=_uniform(rng, c.bump_amp),
                bump_sigma_theta=_uniform(rng, c.bump_sigma_theta),
                bump_sigma_z=_uniform(rng, c.bump_sigma_z),
            )
        )
    return LogSpec(taper, texture, rings, tuple(knots), seed=int(rng_seed))


def min_azimuth_gap(spec: LogSpec) -> float:
    az = np.sort([k.azimuth for k in spec.knots])
    if len(az) < 2:
        return TWO_PI
    gaps = np.diff(np.append(az, az[0] + TWO_PI))
    return float(gaps.min())


# ----------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    k: int
    seed: int
    spec: LogSpec

    def to_record(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "id": self.id,
            "k": self.k,
            "seed": self.seed,
            "spec": self.spec.to_dict(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ManifestEntry":
        if rec.get("version") != MANIFEST_VERSION:
            raise DomainError(f"unsupported manifest version {rec.get('version')!r}")
        return cls(rec["id"], int(rec["k"]), int(rec["seed"]), LogSpec.from_dict(rec["spec"]))


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    master_seed: int = 0

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def by_id(self, log_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == log_id:
                return e
        raise KeyError(log_id)

    def counts_per_k(self) -> dict:
        out: dict = {}
        for e in self.entries:
            out[e.k] = out.get(e.k, 0) + 1
        return dict(sorted(out.items()))

    def to_lines(self) -> list:
        return [json.dumps(e.to_record(), sort_keys=True) for e in self.entries]

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "DatasetManifest":
        entries = [ManifestEntry.from_record(json.loads(ln)) for ln in lines if ln.strip()]
        return cls(tuple(entries))


def log_seed(master_seed: int, k: int, index: int) -> int:
    words = np.random.SeedSequence([int(master_seed), int(k), int(index)]).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


def forge_dataset(
    count_per_k: int,
    k_range: Sequence[int] = (K_MIN, K_MAX),
    master_seed: int = 0,
    config: SynthConfig = DEFAULT_CONFIG,
) -> DatasetManifest:
    """Balanced manifest of ``count_per_k`` logs for every k in the inclusive range."""
    if count_per_k < 1:
        raise DomainError("count_per_k must be >= 1")
    k_lo, k_hi = k_range
    if not K_MIN <= k_lo <= k_hi <= K_MAX:
        raise DomainError(f"k range must lie within [{K_MIN}, {K_MAX}]")
    entries = []
    for k in range(k_lo, k_hi + 1):
        for i in range(count_per_k):
            seed = log_seed(master_seed, k, i)
            entries.append(ManifestEntry(f"log-k{k}-{i:04d}", k, seed, sample_log_spec(seed, k, config)))
    return DatasetManifest(tuple(entries), master_seed)
