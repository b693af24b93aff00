"""Time-domain 2D acoustic propagation with plane-wave transmits.

First-order pressure-velocity formulation on a staggered grid (2nd-order
leapfrog in time, 4th-order differences in space) with a split-field PML on
all four sides. Medium attenuation is a frequency-independent damping term
calibrated so a plane wave decays at ``attenuation_db_per_cm`` per cm of
travel. Sources are additive pressure injections at the element faces; each
element records the mean pressure over its grid points at every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigError, DivergenceError
from .medium import MediumMap, Probe, REFERENCE_SPEED

# 4th-order staggered-grid difference coefficients
_C1 = 9.0 / 8.0
_C2 = 1.0 / 24.0

# amplitude dB per neper
_DB_PER_NEPER = 20.0 / math.log(10.0)


@dataclass
class TransmitEvent:
    """One plane-wave firing: steering angle, active aperture, delays, pulse."""

    angle: float  # radians, 0 = normal incidence
    active_elements: tuple  # (first, last) inclusive indices
    delays: np.ndarray  # seconds, per active element
    pulse: np.ndarray  # dimensionless waveform sampled at the solver dt
    label: str = "center"  # one of left / center / right

    def __post_init__(self):
        self.active_elements = tuple(int(v) for v in self.active_elements)
        self.delays = np.asarray(self.delays, dtype=np.float64)
        self.pulse = np.asarray(self.pulse, dtype=np.float64)
        first, last = self.active_elements
        if last < first:
            raise ConfigError("empty active element range")
        if self.delays.shape != (last - first + 1,):
            raise ConfigError("delays length must match active element count")
        if self.delays.min() < -1e-15 or abs(self.delays.min()) > 1e-15:
            raise ConfigError("delays must be non-negative with minimum 0")


@dataclass
class ChannelData:
    """Per-transmit, per-element, per-time-sample received pressure."""

    traces: np.ndarray  # (n_transmits, n_elements, n_time) float32
    sample_rate: float  # Hz

    def __post_init__(self):
        self.traces = np.asarray(self.traces, dtype=np.float32)
        if self.traces.ndim != 3:
            raise ConfigError("traces must be (n_transmits, n_elements, n_time)")
        if not np.isfinite(self.traces).all():
            raise ConfigError("non-finite samples in channel data")

    @property
    def n_transmits(self) -> int:
        return self.traces.shape[0]

    @property
    def n_elements(self) -> int:
        return self.traces.shape[1]

    @property
    def n_time(self) -> int:
        return self.traces.shape[2]


def plane_wave_delays(angle: float, probe: Probe, active: tuple, c_ref: float) -> np.ndarray:
    """Linear delays for a tilted wavefront; pivot element fires at exactly 0."""
    if c_ref <= 0:
        raise ConfigError("c_ref must be positive")
    if abs(angle) >= math.pi / 3:
        raise ConfigError("steering angle out of range")
    first, last = int(active[0]), int(active[1])
    if last < first:
        raise ConfigError("empty active element range")
    x = probe.element_centers()[first:last + 1]
    pivot = x[0] if angle >= 0 else x[-1]
    d = (x - pivot) * math.sin(angle) / c_ref
    return d - d.min()


def make_pulse(center_frequency: float, n_cycles: int, sample_rate: float) -> np.ndarray:
    """Gaussian-windowed tone burst, peak amplitude 1."""
    if n_cycles < 1:
        raise ConfigError("n_cycles must be >= 1")
    if sample_rate < 4 * center_frequency:
        raise ConfigError("sample_rate below 4x center frequency (aliasing)")
    duration = n_cycles / center_frequency
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    tc = duration / 2
    env = np.exp(-0.5 * ((t - tc) / (duration / 6)) ** 2)
    wave = env * np.sin(2 * math.pi * center_frequency * (t - tc))
    return wave / np.abs(wave).max()


def make_study_events(probe: Probe, sample_rate: float, angle: float = math.radians(14),
                      n_cycles: int = 3, c_ref: float = REFERENCE_SPEED) -> list[TransmitEvent]:
    """Standard three-transmit pattern: diagonal left, direct center, diagonal right.

    Each plane wave uses half the aperture: the left wave fires the left half
    steered inward, the right wave mirrors it, the center wave fires the
    middle half straight down.
    """
    pulse = make_pulse(probe.center_frequency, n_cycles, sample_rate)
    n = probe.n_elements
    half = n // 2
    left = (0, half - 1)
    center = (n // 4, n // 4 + half - 1)
    right = (n - half, n - 1)
    return [
        TransmitEvent(angle=angle, active_elements=left,
                      delays=plane_wave_delays(angle, probe, left, c_ref),
                      pulse=pulse, label="left"),
        TransmitEvent(angle=0.0, active_elements=center,
                      delays=plane_wave_delays(0.0, probe, center, c_ref),
                      pulse=pulse, label="center"),
        TransmitEvent(angle=-angle, active_elements=right,
                      delays=plane_wave_delays(-angle, probe, right, c_ref),
                      pulse=pulse, label="right"),
    ]


def _pml_profile(n: int, thickness: int, dx: float, c_max: float,
                 half: bool) -> np.ndarray:
    """Quadratic split-PML absorption profile along one axis."""
    sigma_max = 3.0 * c_max * math.log(1e5) / (2.0 * thickness * dx)
    pos = np.arange(n, dtype=np.float64) + (0.5 if half else 0.0)
    d_left = thickness - pos
    d_right = pos - (n - 1 - thickness)
    d = np.maximum(np.maximum(d_left, d_right), 0.0) / thickness
    return sigma_max * d ** 2


@njit(cache=True)
def _time_loop(px, pz, vx, vz,
               apx, bpx, apz, bpz, avx, bvx, avz, bvz,
               src_traces, src_row, src_cols, src_elem,
               rec_row, rec_cols, rec_elem, rec_counts, rec,
               probe_rows, probe_cols, probe_rec,
               energy, e_lo, e_hi):
    nz, nx = px.shape
    n_steps = rec.shape[1]
    n_src = src_cols.shape[0]
    n_rec = rec_cols.shape[0]
    n_probe = probe_rows.shape[0]
    for t in range(n_steps):
        # velocity update from total pressure p = px + pz
        for i in range(nz):
            for j in range(1, nx - 2):
                dpx = _C1 * ((px[i, j + 1] + pz[i, j + 1]) - (px[i, j] + pz[i, j])) \
                    - _C2 * ((px[i, j + 2] + pz[i, j + 2]) - (px[i, j - 1] + pz[i, j - 1]))
                vx[i, j] = avx[i, j] * vx[i, j] - bvx[i, j] * dpx
        for i in range(1, nz - 2):
            for j in range(nx):
                dpz = _C1 * ((px[i + 1, j] + pz[i + 1, j]) - (px[i, j] + pz[i, j])) \
                    - _C2 * ((px[i + 2, j] + pz[i + 2, j]) - (px[i - 1, j] + pz[i - 1, j]))
                vz[i, j] = avz[i, j] * vz[i, j] - bvz[i, j] * dpz
        # pressure update from velocity divergence, per split axis
        # x range [2, nx-3] is its own mirror image, so symmetric media stay
        # exactly mirror-symmetric
        for i in range(nz):
            for j in range(2, nx - 2):
                dvx = _C1 * (vx[i, j] - vx[i, j - 1]) - _C2 * (vx[i, j + 1] - vx[i, j - 2])
                px[i, j] = apx[i, j] * px[i, j] - bpx[i, j] * dvx
        for i in range(2, nz - 1):
            for j in range(nx):
                dvz = _C1 * (vz[i, j] - vz[i - 1, j]) - _C2 * (vz[i + 1, j] - vz[i - 2, j])
                pz[i, j] = apz[i, j] * pz[i, j] - bpz[i, j] * dvz
        # additive pressure sources, split equally across the two fields
        for k in range(n_src):
            s = 0.5 * src_traces[t, src_elem[k]]
            px[src_row, src_cols[k]] += s
            pz[src_row, src_cols[k]] += s
        # receivers: mean pressure per element
        for k in range(n_rec):
            rec[rec_elem[k], t] += (px[rec_row, rec_cols[k]] + pz[rec_row, rec_cols[k]]) \
                / rec_counts[rec_elem[k]]
        for k in range(n_probe):
            probe_rec[k, t] = px[probe_rows[k], probe_cols[k]] + pz[probe_rows[k], probe_cols[k]]
        if energy.shape[0] > 0:
            acc = 0.0
            for i in range(e_lo, e_hi):
                for j in range(e_lo, nx - e_lo):
                    v = px[i, j] + pz[i, j]
                    acc += v * v
            energy[t] = acc
        if t % 256 == 255:
            if not (math.isfinite(px[nz // 2, nx // 2]) and math.isfinite(np.abs(px).max())):
                return t
    return -1


def _element_source_traces(event: TransmitEvent, probe: Probe, n_steps: int,
                           dt: float) -> np.ndarray:
    """(n_steps, n_elements) drive signals: pulse shifted by per-element delay."""
    traces = np.zeros((n_steps, probe.n_elements))
    first, last = event.active_elements
    t_axis = np.arange(n_steps) * dt
    pulse_t = np.arange(event.pulse.shape[0]) * dt
    for e in range(first, last + 1):
        shifted = t_axis - event.delays[e - first]
        traces[:, e] = np.interp(shifted, pulse_t, event.pulse, left=0.0, right=0.0)
    return traces


def simulate(medium: MediumMap, probe: Probe, event: TransmitEvent,
             field_probes: list | None = None,
             track_energy: bool = False):
    """Propagate one transmit event; returns (n_elements, n_time) float32 traces.

    ``field_probes`` is an optional list of (row, col) grid points whose
    pressure history is returned alongside; ``track_energy`` additionally
    returns the interior (non-PML) sum of p^2 per step. Both are diagnostics
    used by the physics tests.
    """
    g = medium.grid
    g.check_cfl(medium.c_max)
    if probe.center_frequency * 8 * g.dt > 1.0:
        raise ConfigError("dt too coarse for the probe center frequency")

    rho = medium.density
    c = medium.speed
    kap = rho * c * c

    # attenuation: amplitude decay rate in nepers/s from dB/cm at local speed
    gamma = medium.attenuation_db_per_cm * 100.0 * c / _DB_PER_NEPER

    sigx = _pml_profile(g.nx, g.pml_thickness, g.dx, medium.c_max, half=False)
    sigx_h = _pml_profile(g.nx, g.pml_thickness, g.dx, medium.c_max, half=True)
    sigz = _pml_profile(g.nz, g.pml_thickness, g.dx, medium.c_max, half=False)
    sigz_h = _pml_profile(g.nz, g.pml_thickness, g.dx, medium.c_max, half=True)

    dt = g.dt

    def damp_coeffs(sig2d, scale2d):
        den = 1.0 + 0.5 * dt * sig2d
        return (1.0 - 0.5 * dt * sig2d) / den, dt * scale2d / den

    # pressure coefficients (cell centers)
    apx, bpx = damp_coeffs(sigx[None, :] + gamma, kap / g.dx)
    apz, bpz = damp_coeffs(sigz[:, None] + gamma, kap / g.dx)
    # velocity coefficients on staggered half cells
    rho_x = 0.5 * (rho + np.roll(rho, -1, axis=1))
    rho_z = 0.5 * (rho + np.roll(rho, -1, axis=0))
    avx, bvx = damp_coeffs(sigx_h[None, :] + gamma, 1.0 / (rho_x * g.dx))
    avz, bvz = damp_coeffs(sigz_h[:, None] + gamma, 1.0 / (rho_z * g.dx))

    cols = probe.element_columns(g)
    src_row = g.pml_thickness
    src_cols = []
    src_elem = []
    first, last = event.active_elements
    for e in range(first, last + 1):
        for cc in cols[e]:
            src_cols.append(cc)
            src_elem.append(e)
    rec_cols = []
    rec_elem = []
    for e in range(probe.n_elements):
        for cc in cols[e]:
            rec_cols.append(cc)
            rec_elem.append(e)
    rec_counts = np.array([len(cols[e]) for e in range(probe.n_elements)], dtype=np.float64)

    src_traces = _element_source_traces(event, probe, g.n_steps, dt)

    if field_probes:
        probe_rows = np.array([p[0] for p in field_probes], dtype=np.int64)
        probe_cols = np.array([p[1] for p in field_probes], dtype=np.int64)
    else:
        probe_rows = np.zeros(0, dtype=np.int64)
        probe_cols = np.zeros(0, dtype=np.int64)
    probe_rec = np.zeros((probe_rows.shape[0], g.n_steps))

    energy = np.zeros(g.n_steps if track_energy else 0)

    shape = (g.nz, g.nx)
    px = np.zeros(shape)
    pz = np.zeros(shape)
    vx = np.zeros(shape)
    vz = np.zeros(shape)
    rec = np.zeros((probe.n_elements, g.n_steps))

    bad_step = _time_loop(
        px, pz, vx, vz, apx, bpx, apz, bpz, avx, bvx, avz, bvz,
        src_traces, src_row,
        np.array(src_cols, dtype=np.int64), np.array(src_elem, dtype=np.int64),
        src_row, np.array(rec_cols, dtype=np.int64), np.array(rec_elem, dtype=np.int64),
        rec_counts, rec, probe_rows, probe_cols, probe_rec,
        energy, g.pml_thickness, g.nz - g.pml_thickness)
    if bad_step >= 0:
        raise DivergenceError(f"NaN in wavefield at step {bad_step}")

    out = rec.astype(np.float32)
    extras = {}
    if field_probes:
        extras["field_probes"] = probe_rec
    if track_energy:
        extras["energy"] = energy
    if extras:
        return out, extras
    return out


def simulate_study(medium: MediumMap, probe: Probe, events: list) -> ChannelData:
    """Run every transmit event and stack traces along the transmit axis."""
    traces = [simulate(medium, probe, ev) for ev in events]
    return ChannelData(traces=np.stack(traces, axis=0),
                       sample_rate=1.0 / medium.grid.dt)
