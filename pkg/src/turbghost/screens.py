"""Random thin phase screens with a prescribed wave structure function.

A Gaussian process with the square-law structure function
``D(r) = <(phi(x+r) - phi(x))^2> = alpha r^2`` is exactly a random linear
phase tilt ``phi(x) = a x`` with slope variance ``alpha``; the tilt
generator is therefore both the fastest sampler and an exact oracle for
the square law.  A generalized power-law generator (``D = alpha r^p``,
``0 < p < 2``) synthesizes screens from log-spaced spectral modes between
an outer- and inner-scale cutoff; it is exploratory, since no closed-form
visibility law exists here for ``p != 2``.

Reproducibility contract: the screen at (master_seed, index) is a pure
function of those two integers.  Per-screen generators are seeded with
``numpy.random.SeedSequence((master_seed, index))``, so ensembles can be
generated in any order, in chunks, or in parallel and always agree
bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as _gamma

__all__ = [
    "TiltScreen",
    "GriddedScreen",
    "ScreenEnsemble",
    "StructureFunctionEstimate",
    "screen_rng",
    "sample_tilt_screen",
    "sample_powerlaw_screen",
    "estimate_structure_function",
    "mutual_coherence",
    "dump_ensemble_csv",
    "load_ensemble_csv",
]

SEED_DERIVATION = "numpy.random.SeedSequence((master_seed, index))"


def screen_rng(master_seed, index):
    """Deterministic per-screen generator, independent of generation order."""
    return np.random.default_rng(np.random.SeedSequence((int(master_seed), int(index))))


@dataclass(frozen=True)
class TiltScreen:
    """Exact square-law realization: phi(x) = slope * x."""

    slope_rad_per_mm: float

    def phase(self, x):
        return self.slope_rad_per_mm * np.asarray(x, dtype=float)

    def transmittance(self, x):
        return np.exp(1j * self.phase(x))


@dataclass(frozen=True)
class GriddedScreen:
    """Phase samples on a uniform grid, carrying generation parameters for audit."""

    x_mm: np.ndarray
    phase_rad: np.ndarray
    alpha: float
    exponent: float
    spacing_mm: float

    def __post_init__(self):
        x = np.asarray(self.x_mm, dtype=float)
        ph = np.asarray(self.phase_rad, dtype=float)
        if x.shape != ph.shape or x.ndim != 1 or x.size < 2:
            raise ValueError("x_mm and phase_rad must be equal-length 1-D arrays")
        object.__setattr__(self, "x_mm", x)
        object.__setattr__(self, "phase_rad", ph)

    def phase(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.x_mm[0]) or np.any(x > self.x_mm[-1]):
            raise ValueError("requested positions outside screen support")
        return np.interp(x, self.x_mm, self.phase_rad)

    def transmittance(self, x):
        return np.exp(1j * self.phase(x))


def sample_tilt_screen(alpha_per_mm2, seed):
    """Draw one tilt screen with slope ~ Normal(0, alpha)."""
    if alpha_per_mm2 < 0:
        raise ValueError("alpha_per_mm2 must be >= 0")
    rng = np.random.default_rng(seed)
    slope = rng.standard_normal() * math.sqrt(alpha_per_mm2)
    return TiltScreen(slope)


def _powerlaw_modes(alpha, p, outer_scale_mm, inner_scale_mm, modes_per_decade):
    """Log-spaced one-sided spectral modes for D(r) = alpha r^p, 0 < p < 2.

    One-sided density S(f) = A f^-(1+p) with A chosen so that
    2 * integral S(f) (1 - cos 2 pi f r) df = alpha r^p; the outer/inner
    scales window the integral to [1/L0, 1/l0].
    """
    A = alpha * _gamma(1.0 + p) * math.sin(p * math.pi / 2.0) / ((2.0 * math.pi) ** p * math.pi)
    fmin, fmax = 1.0 / outer_scale_mm, 1.0 / inner_scale_mm
    n_modes = int(math.ceil(math.log10(fmax / fmin) * modes_per_decade))
    f = np.geomspace(fmin, fmax, n_modes)
    df = np.empty_like(f)
    df[1:-1] = (f[2:] - f[:-2]) / 2.0
    df[0] = (f[1] - f[0]) / 2.0
    df[-1] = (f[-1] - f[-2]) / 2.0
    return f, A * f ** (-(1.0 + p)), df


def sample_powerlaw_screen(
    alpha,
    p,
    grid_mm,
    seed,
    outer_scale_mm=4.0e4,
    inner_scale_mm=2.0e-3,
    modes_per_decade=48,
):
    """Draw one gridded screen whose ensemble structure function is alpha * r^p.

    ``p == 2`` degenerates to the exact tilt realization evaluated on the
    grid (the spectral construction concentrates all power at the lowest
    mode in that limit).  For ``p < 2`` the screen is a sum of log-spaced
    sin/cos modes with independent Gaussian amplitudes; the approach to
    ``alpha r^p`` is limited by the outer-scale window, which matters most
    for exponents near 2 (infrared-heavy spectra).
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if not 0.0 < p <= 2.0:
        raise ValueError("p must be in (0, 2]")
    grid = np.asarray(grid_mm, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must be a 1-D array of at least 2 points")
    spacing = np.diff(grid)
    if not np.allclose(spacing, spacing[0], rtol=1e-9, atol=0.0):
        raise ValueError("grid must be uniform")
    if alpha == 0.0:
        return GriddedScreen(grid, np.zeros_like(grid), alpha, p, float(spacing[0]))
    rng = np.random.default_rng(seed)
    if p == 2.0:
        slope = rng.standard_normal() * math.sqrt(alpha)
        return GriddedScreen(grid, slope * grid, alpha, p, float(spacing[0]))
    f, S, df = _powerlaw_modes(alpha, p, outer_scale_mm, inner_scale_mm, modes_per_decade)
    amp = np.sqrt(S * df)
    a = rng.standard_normal(f.size)
    b = rng.standard_normal(f.size)
    arg = 2.0 * math.pi * np.outer(f, grid)
    phase = (amp * a) @ np.cos(arg) + (amp * b) @ np.sin(arg)
    return GriddedScreen(grid, phase, alpha, p, float(spacing[0]))


@dataclass(frozen=True)
class ScreenEnsemble:
    """Ordered, reproducible collection of screens.

    Regenerating with the same master seed reproduces every element
    bit-for-bit; ordering is by index, never by completion time.
    """

    screens: tuple
    master_seed: int
    derivation: str = SEED_DERIVATION

    def __len__(self):
        return len(self.screens)

    def __getitem__(self, i):
        return self.screens[i]

    def __iter__(self):
        return iter(self.screens)

    @classmethod
    def tilts(cls, alpha_per_mm2, n_screens, master_seed):
        if n_screens < 1:
            raise ValueError("n_screens must be >= 1")
        screens = tuple(
            sample_tilt_screen(alpha_per_mm2, np.random.SeedSequence((int(master_seed), i)))
            for i in range(n_screens)
        )
        return cls(screens, int(master_seed))

    @classmethod
    def powerlaw(cls, alpha, p, grid_mm, n_screens, master_seed, **synth_kwargs):
        if n_screens < 1:
            raise ValueError("n_screens must be >= 1")
        screens = tuple(
            sample_powerlaw_screen(
                alpha, p, grid_mm, np.random.SeedSequence((int(master_seed), i)), **synth_kwargs
            )
            for i in range(n_screens)
        )
        return cls(screens, int(master_seed))


def tilt_slopes(alpha_per_mm2, n_screens, master_seed):
    """Vector of the n tilt slopes the ensemble constructor would produce."""
    return np.array(
        [
            sample_tilt_screen(alpha_per_mm2, np.random.SeedSequence((int(master_seed), i))).slope_rad_per_mm
            for i in range(n_screens)
        ]
    )


@dataclass(frozen=True)
class StructureFunctionEstimate:
    separations_mm: np.ndarray
    values: np.ndarray
    standard_errors: np.ndarray
    valid: np.ndarray  # False where the separation is not representable


def estimate_structure_function(ensemble: ScreenEnsemble, separations_mm):
    """Unbiased sample estimate of D(r) = <(phi(x+r) - phi(x))^2>.

    For tilt screens the phase difference at separation r is slope*r at
    every x, so each screen contributes one exact sample.  For gridded
    screens the separation is snapped to the nearest whole number of grid
    steps (within 1e-6 mm) and averaged over all in-support pairs; a
    separation off the lattice or beyond the span is marked invalid rather
    than failing the whole estimate.
    """
    if len(ensemble) == 0:
        raise ValueError("ensemble is empty")
    seps = np.atleast_1d(np.asarray(separations_mm, dtype=float))
    values = np.full(seps.shape, np.nan)
    errors = np.full(seps.shape, np.nan)
    valid = np.zeros(seps.shape, dtype=bool)
    n = len(ensemble)
    for j, r in enumerate(seps):
        r = abs(r)  # D is even in the separation
        per_screen = np.empty(n)
        ok = True
        for i, screen in enumerate(ensemble):
            if isinstance(screen, TiltScreen):
                per_screen[i] = (screen.slope_rad_per_mm * r) ** 2
            else:
                lag_f = r / screen.spacing_mm
                lag = int(round(lag_f))
                if abs(lag_f - lag) * screen.spacing_mm > 1e-6:
                    ok = False
                    break
                if lag >= screen.x_mm.size:
                    ok = False
                    break
                if lag == 0:
                    per_screen[i] = 0.0
                else:
                    diff = screen.phase_rad[lag:] - screen.phase_rad[:-lag]
                    per_screen[i] = np.mean(diff**2)
        if not ok:
            continue
        valid[j] = True
        values[j] = per_screen.mean()
        errors[j] = per_screen.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    return StructureFunctionEstimate(seps, values, errors, valid)


def mutual_coherence(alpha_per_mm2, dx_mm):
    """Two-point coherence exp(-alpha dx^2 / 2) of the square-law screen ensemble.

    Equals the characteristic function of the Gaussian tilt-slope
    distribution evaluated at the separation, so the tilt Monte Carlo
    average of exp(i (phi(x+dx) - phi(x))) reproduces it exactly.
    """
    if alpha_per_mm2 < 0:
        raise ValueError("alpha_per_mm2 must be >= 0")
    dx = np.asarray(dx_mm, dtype=float)
    out = np.exp(-alpha_per_mm2 * dx**2 / 2.0)
    return out if out.ndim else float(out)


def dump_ensemble_csv(ensemble: ScreenEnsemble, path):
    """Write a tilt ensemble as 'index,slope' rows (full float precision)."""
    lines = ["index,slope"]
    for i, screen in enumerate(ensemble):
        if not isinstance(screen, TiltScreen):
            raise ValueError("only tilt ensembles serialize to CSV")
        lines.append(f"{i},{screen.slope_rad_per_mm!r}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_ensemble_csv(path, master_seed=-1):
    """Read a tilt ensemble written by dump_ensemble_csv."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "index,slope":
            raise ValueError(f"unexpected header {header!r}")
        screens = []
        for ln, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            idx_s, slope_s = line.split(",")
            if int(idx_s) != len(screens):
                raise ValueError(f"non-contiguous index at line {ln}")
            screens.append(TiltScreen(float(slope_s)))
    return ScreenEnsemble(tuple(screens), master_seed, derivation="loaded from CSV")
