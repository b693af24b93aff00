"""End-to-end sample generation: phantom -> simulation -> channel data + label.

A RunSetup bundles everything a dataset needs (grid, probe, transmit
pattern, phantom distribution, recovery region). Sample i uses RNG seed
``base_seed XOR i`` so workers can generate disjoint samples independently
with identical results regardless of worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .dataio import SampleRecord, write_dataset
from .medium import (PhantomConfig, Probe, RecoveryRegion, SimGrid, centered_probe,
                     centered_region, extract_label, generate_phantom)
from .solver import make_study_events, simulate_study


@dataclass
class RunSetup:
    grid: SimGrid
    probe: Probe
    region: RecoveryRegion
    phantom: PhantomConfig
    steering_angle_deg: float = 14.0
    n_cycles: int = 3
    n_transmits: int = 3

    def events(self):
        evs = make_study_events(self.probe, 1.0 / self.grid.dt,
                                angle=math.radians(self.steering_angle_deg),
                                n_cycles=self.n_cycles)
        if self.n_transmits == 1:
            return [evs[1]]
        if self.n_transmits != 3:
            raise ValueError("n_transmits must be 1 or 3")
        return evs

    def meta(self) -> dict:
        return {
            "grid": asdict(self.grid),
            "probe": asdict(self.probe),
            "region": asdict(self.region),
            "phantom": asdict(self.phantom),
            "steering_angle_deg": self.steering_angle_deg,
            "n_cycles": self.n_cycles,
            "n_transmits": self.n_transmits,
        }


def desk_setup(nx: int = 384, nz: int = 384, dx: float = 7.3e-5, dt: float = 1.8e-8,
               n_steps: int = 2048, pml_thickness: int = 20, n_elements: int = 64,
               center_frequency: float = 5e6, out_h: int = 64, out_w: int = 32,
               n_transmits: int = 3, base_seed: int = 0) -> RunSetup:
    """Desk-scale defaults: 2.8 cm square domain, 64-element 5 MHz probe."""
    grid = SimGrid(nx=nx, nz=nz, dx=dx, dt=dt, n_steps=n_steps,
                   pml_thickness=pml_thickness)
    probe = centered_probe(grid, n_elements=n_elements,
                           center_frequency=center_frequency)
    region = centered_region(grid, probe, out_h=out_h, out_w=out_w)
    phantom = PhantomConfig(wavelength=1540.0 / center_frequency, rng_seed=base_seed)
    return RunSetup(grid=grid, probe=probe, region=region, phantom=phantom,
                    n_transmits=n_transmits)


def setup_from_dict(items: dict) -> RunSetup:
    """Build a RunSetup from flat config keys (see desk_setup for defaults)."""
    known = {"nx", "nz", "dx", "dt", "n_steps", "pml_thickness", "n_elements",
             "center_frequency", "out_h", "out_w", "n_transmits", "base_seed"}
    kwargs = {k: v for k, v in items.items() if k in known}
    setup = desk_setup(**kwargs)
    phantom_keys = {"n_ellipses_range", "speed_range", "background_density",
                    "speckle_amplitude_range", "speckle_density_per_lambda2",
                    "attenuation_db_per_cm"}
    overrides = {k: v for k, v in items.items() if k in phantom_keys}
    if overrides:
        base = asdict(setup.phantom)
        base.update(overrides)
        setup.phantom = PhantomConfig(**base)
    return setup


def generate_sample(setup: RunSetup, sample_index: int, base_seed: int) -> SampleRecord:
    """One phantom, one full simulation study, one label."""
    pcfg = PhantomConfig(**{**asdict(setup.phantom),
                            "rng_seed": base_seed ^ sample_index})
    medium = generate_phantom(pcfg, setup.grid)
    channel = simulate_study(medium, setup.probe, setup.events())
    label = extract_label(medium, setup.region).astype(np.float32)
    return SampleRecord(sample_id=sample_index, channel=channel, label=label,
                        meta=setup.meta())


def _gen_one(args):
    setup, i, base_seed = args
    return generate_sample(setup, i, base_seed)


def gen_dataset(setup: RunSetup, n_samples: int, path, base_seed: int = 0,
                workers: int = 1, start_index: int = 0, log=None) -> int:
    """Generate n_samples records and write them to path.

    Output is byte-identical for any worker count: per-sample RNG streams
    are derived from (base_seed, index) and records are written in index
    order.
    """
    indices = range(start_index, start_index + n_samples)

    def produce():
        if workers <= 1:
            for i in indices:
                rec = generate_sample(setup, i, base_seed)
                if log:
                    log(f"sample {i} done")
                yield rec
        else:
            import multiprocessing as mp
            with mp.Pool(workers) as pool:
                for rec in pool.imap(_gen_one,
                                     [(setup, i, base_seed) for i in indices]):
                    if log:
                        log(f"sample {rec.sample_id} done")
                    yield rec

    try:
        return write_dataset(produce(), path, meta=setup.meta())
    except Exception:
        from pathlib import Path
        Path(path).unlink(missing_ok=True)
        raise
