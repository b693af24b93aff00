"""Simulation grids, probe geometry, elastic relations, and random phantoms.

Phantoms are uniform ellipses ("organs") over a homogeneous background in the
sound-speed domain, with sub-wavelength speckle realized as multiplicative
density perturbations. All randomness flows through numpy's PCG64 generator
seeded from a 64-bit integer, so a (config, grid) pair fully determines the
phantom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

REFERENCE_SPEED = 1540.0  # m/s, soft-tissue average
SPEED_MIN = 1000.0
SPEED_MAX = 2500.0


@dataclass(frozen=True)
class SimGrid:
    """Uniform square-cell 2D grid with explicit time stepping."""

    nx: int = 384
    nz: int = 384
    dx: float = 7.3e-5  # m
    dt: float = 1.8e-8  # s
    n_steps: int = 2048
    pml_thickness: int = 20

    def __post_init__(self):
        if self.dx <= 0 or self.dt <= 0:
            raise ConfigError("dx and dt must be positive")
        if self.nx < 64 or self.nz < 64:
            raise ConfigError("grid must be at least 64x64")
        if self.pml_thickness < 8 or self.pml_thickness >= min(self.nx, self.nz) / 4:
            raise ConfigError("pml_thickness out of range")

    @property
    def width(self) -> float:
        return self.nx * self.dx

    @property
    def depth(self) -> float:
        return self.nz * self.dx

    def cfl_number(self, c_max: float) -> float:
        return self.dt * c_max / self.dx

    def check_cfl(self, c_max: float, limit: float = 0.5) -> None:
        if self.cfl_number(c_max) > limit:
            raise ConfigError(
                f"CFL violation: dt*c_max/dx = {self.cfl_number(c_max):.3f} > {limit}"
            )


@dataclass(frozen=True)
class Probe:
    """1D linear array on the top edge of the grid."""

    n_elements: int = 64
    pitch: float = 5 * 7.3e-5  # m, element center spacing
    element_width_points: int = 4
    kerf_points: int = 1
    center_frequency: float = 5e6  # Hz
    first_element_x: float = 0.0  # m, center of element 0

    def __post_init__(self):
        if self.center_frequency <= 0:
            raise ConfigError("center_frequency must be positive")
        if self.n_elements < 1:
            raise ConfigError("need at least one element")

    @property
    def aperture(self) -> float:
        """Width from first to last element center plus one element."""
        return (self.n_elements - 1) * self.pitch + self.element_width_points * self.pitch / (
            self.element_width_points + self.kerf_points
        )

    def element_centers(self) -> np.ndarray:
        return self.first_element_x + self.pitch * np.arange(self.n_elements)

    def element_columns(self, grid: SimGrid) -> list[np.ndarray]:
        """Grid column indices covered by each element."""
        cols = []
        step = self.element_width_points + self.kerf_points
        for i in range(self.n_elements):
            c = self.first_element_x + i * self.pitch
            j0 = int(round(c / grid.dx - self.element_width_points / 2))
            cols.append(np.arange(j0, j0 + self.element_width_points))
        if cols[0][0] < 0 or cols[-1][-1] >= grid.nx:
            raise ConfigError("probe does not fit the grid width")
        del step
        return cols

    def fits(self, grid: SimGrid) -> bool:
        total = self.n_elements * (self.element_width_points + self.kerf_points)
        return total * grid.dx <= grid.width


def centered_probe(grid: SimGrid, n_elements: int = 64, element_width_points: int = 4,
                   kerf_points: int = 1, center_frequency: float = 5e6) -> Probe:
    """Probe laterally centered on the grid, pitch derived from the grid step."""
    pitch = (element_width_points + kerf_points) * grid.dx
    span = (n_elements - 1) * pitch
    first_x = (grid.width - span) / 2
    return Probe(
        n_elements=n_elements,
        pitch=pitch,
        element_width_points=element_width_points,
        kerf_points=kerf_points,
        center_frequency=center_frequency,
        first_element_x=first_x,
    )


@dataclass(frozen=True)
class ElasticModel:
    """Linear isotropic elastic constants for one tissue."""

    bulk_modulus: float  # Pa
    shear_modulus: float  # Pa
    density: float  # kg/m^3
    youngs_modulus: float = 0.0
    poisson_ratio: float = 0.0

    def __post_init__(self):
        if self.bulk_modulus <= 0 or self.density <= 0:
            raise ConfigError("bulk modulus and density must be positive")
        if self.shear_modulus < 0:
            raise ConfigError("shear modulus must be non-negative")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ConfigError("poisson ratio out of (-1, 0.5)")

    @property
    def lame_lambda(self) -> float:
        return self.bulk_modulus - (2.0 / 3.0) * self.shear_modulus

    @property
    def lame_mu(self) -> float:
        return self.shear_modulus


def longitudinal_speed(model: ElasticModel) -> float:
    """Pressure-wave speed sqrt((K + 4/3 G) / rho)."""
    return math.sqrt((model.bulk_modulus + (4.0 / 3.0) * model.shear_modulus) / model.density)


def shear_speed(model: ElasticModel) -> float:
    """Transverse-wave speed sqrt(G / rho)."""
    return math.sqrt(model.shear_modulus / model.density)


@dataclass
class MediumMap:
    """Heterogeneous 2D medium on a simulation grid."""

    grid: SimGrid
    speed: np.ndarray  # nz x nx, m/s
    density: np.ndarray  # nz x nx, kg/m^3
    attenuation_db_per_cm: float = 2.5  # dB/cm at the probe center frequency

    def __post_init__(self):
        self.speed = np.asarray(self.speed, dtype=np.float64)
        self.density = np.asarray(self.density, dtype=np.float64)
        shape = (self.grid.nz, self.grid.nx)
        if self.speed.shape != shape or self.density.shape != shape:
            raise ConfigError(f"field shape must be {shape}")
        if self.speed.min() < SPEED_MIN or self.speed.max() > SPEED_MAX:
            raise ConfigError("speed samples outside [1000, 2500] m/s")
        if self.density.min() <= 0:
            raise ConfigError("density must be positive")

    @property
    def c_max(self) -> float:
        return float(self.speed.max())


def homogeneous_medium(grid: SimGrid, speed: float = REFERENCE_SPEED,
                       density: float = 1000.0, attenuation_db_per_cm: float = 0.0) -> MediumMap:
    return MediumMap(
        grid=grid,
        speed=np.full((grid.nz, grid.nx), speed),
        density=np.full((grid.nz, grid.nx), density),
        attenuation_db_per_cm=attenuation_db_per_cm,
    )


@dataclass
class PhantomConfig:
    """Random-phantom distribution parameters. All units SI."""

    n_ellipses_range: tuple = (1, 5)
    speed_range: tuple = (1300.0, 1800.0)
    background_density: float = 900.0  # kg/m^3
    speckle_amplitude_range: tuple = (-0.03, 0.06)
    speckle_density_per_lambda2: float = 2.0
    wavelength: float = REFERENCE_SPEED / 5e6  # m
    attenuation_db_per_cm: float = 2.5
    rng_seed: int = 0

    def __post_init__(self):
        self.n_ellipses_range = tuple(self.n_ellipses_range)
        self.speed_range = tuple(float(v) for v in self.speed_range)
        self.speckle_amplitude_range = tuple(float(v) for v in self.speckle_amplitude_range)
        lo, hi = self.n_ellipses_range
        if not (1 <= lo <= hi):
            raise ConfigError("n_ellipses_range must satisfy 1 <= min <= max")
        if self.speed_range[0] < SPEED_MIN or self.speed_range[1] > SPEED_MAX:
            raise ConfigError("speed_range outside medium bounds")
        if self.speckle_amplitude_range[0] > self.speckle_amplitude_range[1]:
            raise ConfigError("speckle amplitude low > high")


def ellipse_mask(grid: SimGrid, cx: float, cz: float, a: float, b: float,
                 theta: float) -> np.ndarray:
    """Boolean nz x nx mask; inside iff (u/a)^2 + (v/b)^2 <= 1 in rotated coords."""
    x = (np.arange(grid.nx) + 0.5) * grid.dx
    z = (np.arange(grid.nz) + 0.5) * grid.dx
    X, Z = np.meshgrid(x, z)
    ct, st = math.cos(theta), math.sin(theta)
    u = (X - cx) * ct + (Z - cz) * st
    v = -(X - cx) * st + (Z - cz) * ct
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def generate_phantom(config: PhantomConfig, grid: SimGrid) -> MediumMap:
    """Random ellipses in the speed domain plus density speckle.

    Deterministic in (config, grid): same seed, same phantom, bit for bit.
    """
    rng = np.random.Generator(np.random.PCG64(config.rng_seed))
    lo_c, hi_c = config.speed_range

    speed = np.full((grid.nz, grid.nx), rng.uniform(lo_c, hi_c))
    n_ell = int(rng.integers(config.n_ellipses_range[0], config.n_ellipses_range[1] + 1))
    a_max = max(grid.width, grid.depth) / 3.0
    a_min = 2.0 * config.wavelength
    for _ in range(n_ell):
        cx = rng.uniform(0.0, grid.width)
        cz = rng.uniform(0.0, grid.depth)
        a = rng.uniform(a_min, a_max)
        b = rng.uniform(a_min, a_max)
        theta = rng.uniform(0.0, math.pi)
        c_ell = rng.uniform(lo_c, hi_c)
        speed[ellipse_mask(grid, cx, cz, a, b, theta)] = c_ell

    # Speckle: independent per-cell reflectors with the requested mean density
    # per wavelength^2; each multiplies the local density by (1 + a).
    p = config.speckle_density_per_lambda2 * grid.dx ** 2 / config.wavelength ** 2
    p = min(p, 1.0)
    density = np.full((grid.nz, grid.nx), config.background_density)
    hits = rng.random((grid.nz, grid.nx)) < p
    amps = rng.uniform(config.speckle_amplitude_range[0],
                       config.speckle_amplitude_range[1],
                       size=(grid.nz, grid.nx))
    density *= np.where(hits, 1.0 + amps, 1.0)

    return MediumMap(grid=grid, speed=speed, density=density,
                     attenuation_db_per_cm=config.attenuation_db_per_cm)


@dataclass(frozen=True)
class RecoveryRegion:
    """Rectangle over which sound speed is recovered, plus label resolution."""

    x0: float  # m, left edge
    z0: float  # m, top edge
    width: float
    depth: float
    out_h: int
    out_w: int

    def __post_init__(self):
        if self.width <= 0 or self.depth <= 0 or self.out_h < 1 or self.out_w < 1:
            raise ConfigError("degenerate recovery region")


def centered_region(grid: SimGrid, probe: Probe, out_h: int = 64, out_w: int = 32) -> RecoveryRegion:
    """Central region half the aperture wide and one aperture deep (2:1 aspect)."""
    centers = probe.element_centers()
    aperture = centers[-1] - centers[0]
    width = aperture / 2
    depth = aperture
    x0 = (grid.width - width) / 2
    z0 = grid.pml_thickness * grid.dx
    return RecoveryRegion(x0=x0, z0=z0, width=width, depth=depth, out_h=out_h, out_w=out_w)


def _overlap_weights(start: float, length: float, n_out: int, dx: float, n_cells: int) -> np.ndarray:
    """n_out x n_cells matrix of normalized interval overlaps for area averaging."""
    w = np.zeros((n_out, n_cells))
    step = length / n_out
    for i in range(n_out):
        lo = start + i * step
        hi = lo + step
        j0 = max(int(math.floor(lo / dx)), 0)
        j1 = min(int(math.ceil(hi / dx)), n_cells)
        for j in range(j0, j1):
            w[i, j] = max(0.0, min(hi, (j + 1) * dx) - max(lo, j * dx))
        s = w[i].sum()
        if s <= 0:
            raise IndexError("recovery region interval outside grid")
        w[i] /= s
    return w


def extract_label(medium: MediumMap, region: RecoveryRegion) -> np.ndarray:
    """Area-averaged crop of the speed field over the region, out_h x out_w."""
    g = medium.grid
    if region.x0 < 0 or region.z0 < 0 or \
            region.x0 + region.width > g.width + 1e-12 or \
            region.z0 + region.depth > g.depth + 1e-12:
        raise IndexError("recovery region outside grid")
    wz = _overlap_weights(region.z0, region.depth, region.out_h, g.dx, g.nz)
    wx = _overlap_weights(region.x0, region.width, region.out_w, g.dx, g.nx)
    return wz @ medium.speed @ wx.T
