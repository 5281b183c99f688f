"""Nonlinear least-squares recovery of fringe visibility and turbulence strength.

Scans are fit with a seven-parameter fringe model
``background + amplitude * exp(-((x-x0)/w)^2/2) * (1 + V cos(k0 (x-x0) + phi))``
under Poisson weights (variance max(counts, 1)).  The optimizer is a
bounded trust-region least-squares solver (damped Gauss-Newton steps with
an internal reflective transform enforcing V in [0, 1]); standard errors
come from the local curvature of the weighted objective at the solution.

Visibility-vs-distance campaigns are reduced to the turbulence strength
``alpha`` by weighted least squares of the attenuation law
``V = g exp(-alpha d^2 / (2 (k/k0)^2))`` with the per-configuration
ceiling ``g`` known.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import least_squares

from .scan import ScanData

__all__ = [
    "ScanFitModel",
    "FitResult",
    "AlphaFitResult",
    "initial_guess",
    "fit_profile",
    "fit_scan",
    "fit_alpha",
    "slit_correction",
]

MAX_ITERATIONS = 500
OBJECTIVE_TOL = 1e-10

_PARAM_NAMES = (
    "amplitude_cps",
    "center_mm",
    "envelope_width_mm",
    "fringe_wavenumber",
    "fringe_phase_rad",
    "visibility",
    "background_cps",
)
# Box bounds: positive amplitude/width/wavenumber, visibility in [0, 1].
_PARAM_LO = np.array([1e-12, -np.inf, 1e-9, 1e-9, -np.inf, 0.0, -np.inf])
_PARAM_HI = np.array([np.inf, np.inf, np.inf, np.inf, np.inf, 1.0, np.inf])


@dataclass(frozen=True)
class ScanFitModel:
    """Fringe-model parameters for a coincidence scan."""

    amplitude_cps: float
    center_mm: float
    envelope_width_mm: float
    fringe_wavenumber: float
    fringe_phase_rad: float
    visibility: float
    background_cps: float

    def __post_init__(self):
        if not self.amplitude_cps > 0:
            raise ValueError("amplitude_cps must be positive")
        if not self.envelope_width_mm > 0:
            raise ValueError("envelope_width_mm must be positive")
        if not self.fringe_wavenumber > 0:
            raise ValueError("fringe_wavenumber must be positive")
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError("visibility must be in [0, 1]")

    def evaluate(self, x):
        """Model rate (counts/s) at position x (mm)."""
        x = np.asarray(x, dtype=float)
        u = x - self.center_mm
        env = np.exp(-0.5 * (u / self.envelope_width_mm) ** 2)
        fringe = 1.0 + self.visibility * np.cos(self.fringe_wavenumber * u + self.fringe_phase_rad)
        out = self.background_cps + self.amplitude_cps * env * fringe
        return out if out.ndim else float(out)

    def to_vector(self):
        return np.array([getattr(self, name) for name in _PARAM_NAMES])

    @classmethod
    def from_vector(cls, vec):
        return cls(**dict(zip(_PARAM_NAMES, (float(v) for v in vec))))


@dataclass(frozen=True)
class FitResult:
    """Least-squares solution with curvature standard errors and diagnostics.

    ``converged`` False marks the estimates unusable; they are retained
    only for post-mortem inspection.
    """

    model: ScanFitModel | None
    errors: dict
    reduced_chi2: float
    converged: bool
    n_evaluations: int = 0
    message: str = ""

    @property
    def visibility(self):
        return None if self.model is None else self.model.visibility

    @property
    def visibility_error(self):
        return self.errors.get("visibility")

    def to_json_dict(self):
        """Stable serialization schema for fit results."""
        return {
            "schema_version": 1,
            "converged": self.converged,
            "model": None if self.model is None else asdict(self.model),
            "errors": dict(self.errors),
            "reduced_chi2": self.reduced_chi2,
            "n_evaluations": self.n_evaluations,
            "message": self.message,
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_json_dict(), **kwargs)


def _moment_scales(x, y):
    """Centroid and second-moment width of the above-baseline profile."""
    yp = np.clip(y - float(y.min()), 0.0, None)
    total = yp.sum()
    if total <= 0:
        raise ValueError("profile has no mass above background")
    step = float(np.mean(np.diff(x)))
    c0 = float((x * yp).sum() / total)
    w0 = math.sqrt(max(float(((x - c0) ** 2 * yp).sum() / total), step**2))
    return c0, w0


def _envelope_grid_fit(x, y, c0, w0, k0=None):
    """Pick envelope shape by grid search, coefficients by linear solve.

    For each candidate (center, width) the remaining parameters are a
    plain linear least-squares problem: [env, 1] when fringe-blind, plus
    the envelope-weighted fringe quadratures when ``k0`` is known.  The
    grid avoids the degenerate flat-envelope corner a free nonlinear
    prefit can wander into, and is fully deterministic.
    """
    best = None
    for c in (c0 - 0.5 * w0, c0, c0 + 0.5 * w0):
        for w in (0.6 * w0, w0, 1.5 * w0, 2.25 * w0, 3.4 * w0):
            env = np.exp(-0.5 * ((x - c) / w) ** 2)
            cols = [env, np.ones_like(x)]
            if k0 is not None:
                cols.insert(1, env * np.cos(k0 * (x - c)))
                cols.insert(2, env * np.sin(k0 * (x - c)))
            basis = np.column_stack(cols)
            coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
            if not np.isfinite(coef).all() or coef[0] <= 0:
                continue
            cost = float(np.sum((basis @ coef - y) ** 2))
            if best is None or cost < best[0]:
                best = (cost, c, w, coef)
    if best is None:
        raise ValueError("profile has no envelope-like structure")
    return best[1], best[2], best[3]


def _residual_fringe_guess(residual, step):
    """Dominant residual frequency via the windowed periodogram.

    The top 15% of bins are excluded: an oversampling scan never has a
    real fringe there, while white noise peaks pile up at Nyquist."""
    window = np.hanning(len(residual))
    spec = np.fft.rfft(residual * window)
    freqs = 2.0 * math.pi * np.fft.rfftfreq(len(residual), d=step)
    lo = 2
    hi = max(lo + 2, int(0.85 * len(spec)))
    i = lo + int(np.argmax(np.abs(spec[lo:hi])))
    if 0 < i < len(spec) - 1:  # parabolic peak interpolation
        a, b, c = np.abs(spec[i - 1]), np.abs(spec[i]), np.abs(spec[i + 1])
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
        k0 = freqs[i] + shift * (freqs[1] - freqs[0])
    else:
        k0 = freqs[i]
    return float(max(k0, freqs[1] / 2.0))


def initial_guess(positions_mm, rates_cps):
    """Data-driven starting point, reproducible without hand-tuning.

    A fringe-blind envelope prefit supplies amplitude, center, width and
    background; the spectral peak of its residual gives the fringe
    wavenumber; projecting the residual on the envelope-weighted
    quadrature pair gives the fringe phase and visibility."""
    x = np.asarray(positions_mm, dtype=float)
    y = np.asarray(rates_cps, dtype=float)
    if x.size < 8:
        raise ValueError("need at least 8 points for an initial guess")
    c0, w0 = _moment_scales(x, y)
    step = float(np.mean(np.diff(x)))
    # Fringe-blind pass isolates the slow structure; its residual carries
    # the fringe for the spectral stage.
    center, width, coef = _envelope_grid_fit(x, y, c0, w0)
    env = np.exp(-0.5 * ((x - center) / width) ** 2)
    residual = y - (coef[0] * env + coef[1])
    k0 = _residual_fringe_guess(residual, step)
    # Joint pass with the fringe quadratures:
    # y ~ bg + a*env + (a V cos phi)*env*cos - (a V sin phi)*env*sin.
    center, width, coef = _envelope_grid_fit(x, y, c0, w0, k0=k0)
    amplitude, q_cos, q_sin, bg = (float(v) for v in coef)
    fringe_amp = math.hypot(q_cos, q_sin)
    phase = math.atan2(-q_sin, q_cos)
    vis = min(max(fringe_amp / max(amplitude, 1e-12), 0.02), 0.98)
    amplitude = max(amplitude, 1e-9)
    return ScanFitModel(amplitude, center, max(width, 1e-6), k0, phase, vis, max(bg, 0.0))


def fit_profile(positions_mm, values, sigma=None, init=None, max_iterations=MAX_ITERATIONS):
    """Weighted least-squares fit of the fringe model to a sampled profile.

    ``sigma`` gives per-point standard deviations (unit weights when
    omitted).  Deterministic given data and starting point.  Returns a
    non-converged FitResult rather than raising when the optimizer stalls.
    """
    x = np.asarray(positions_mm, dtype=float)
    y = np.asarray(values, dtype=float)
    if sigma is None:
        sig = np.ones_like(y)
    else:
        sig = np.asarray(sigma, dtype=float)
    if init is None:
        init = initial_guess(x, y)
    p0 = np.clip(init.to_vector(), _PARAM_LO, _PARAM_HI)

    def resid(p):
        model = _evaluate_vector(p, x)
        return (model - y) / sig

    sol = least_squares(
        resid,
        p0,
        bounds=(_PARAM_LO, _PARAM_HI),
        method="trf",
        ftol=OBJECTIVE_TOL,
        xtol=1e-12,
        gtol=1e-12,
        max_nfev=max_iterations * (len(p0) + 1),
    )
    dof = max(x.size - len(p0), 1)
    red_chi2 = float(2.0 * sol.cost / dof)
    errors = _curvature_errors(sol.jac)
    converged = bool(sol.success)
    model = None
    message = sol.message
    try:
        model = ScanFitModel.from_vector(sol.x)
    except ValueError as exc:
        converged = False
        message = f"{sol.message}; invalid solution: {exc}"
    return FitResult(
        model=model,
        errors=dict(zip(_PARAM_NAMES, errors)),
        reduced_chi2=red_chi2,
        converged=converged,
        n_evaluations=int(sol.nfev),
        message=message,
    )


def _evaluate_vector(p, x):
    amp, x0, w, k0, phi, vis, bg = p
    u = x - x0
    return bg + amp * np.exp(-0.5 * (u / w) ** 2) * (1.0 + vis * np.cos(k0 * u + phi))


def _curvature_errors(jac):
    """1-sigma errors from (J^T J)^-1 of the weighted residual Jacobian."""
    jtj = jac.T @ jac
    try:
        cov = np.linalg.pinv(jtj)
        return [float(math.sqrt(max(v, 0.0))) for v in np.diag(cov)]
    except np.linalg.LinAlgError:
        return [float("nan")] * jac.shape[1]


def fit_scan(data: ScanData, init: ScanFitModel | None = None):
    """Fit the fringe model to a coincidence scan with Poisson weights.

    The fit runs in counts space, so heterogeneous dwell times weigh in
    correctly: residuals are (counts - duration * rate_model) / sqrt(max(counts, 1)).
    Requires at least 10 points spanning at least two fringe periods of
    the (given or estimated) wavenumber.  All-zero counts or a stalled
    optimizer yield an explicit non-converged result.
    """
    if len(data) < 10:
        raise ValueError("need at least 10 scan points")
    if np.all(data.counts == 0):
        return FitResult(None, {}, float("nan"), False, 0, "degenerate data: all counts zero")
    rates = data.rates_cps
    if init is None:
        try:
            init = initial_guess(data.positions_mm, rates)
        except ValueError as exc:
            return FitResult(None, {}, float("nan"), False, 0, f"initialization failed: {exc}")
    span = data.positions_mm[-1] - data.positions_mm[0]
    if span * init.fringe_wavenumber < 2.0 * 2.0 * math.pi:
        raise ValueError("scan must span at least two fringe periods")

    x = data.positions_mm
    counts = data.counts.astype(float)
    dur = data.durations_s
    sig = np.sqrt(np.maximum(counts, 1.0))
    p0 = np.clip(init.to_vector(), _PARAM_LO, _PARAM_HI)

    def resid(p):
        return (dur * _evaluate_vector(p, x) - counts) / sig

    sol = least_squares(
        resid,
        p0,
        bounds=(_PARAM_LO, _PARAM_HI),
        method="trf",
        ftol=OBJECTIVE_TOL,
        xtol=1e-12,
        gtol=1e-12,
        max_nfev=MAX_ITERATIONS * (len(p0) + 1),
    )
    dof = max(x.size - len(p0), 1)
    red_chi2 = float(2.0 * sol.cost / dof)
    # d(residual)/d(param) = dur/sig * d(rate)/d(param); curvature carries the weights.
    errors = _curvature_errors(sol.jac)
    converged = bool(sol.success)
    model = None
    message = sol.message
    try:
        model = ScanFitModel.from_vector(sol.x)
    except ValueError as exc:
        converged = False
        message = f"{sol.message}; invalid solution: {exc}"
    return FitResult(
        model=model,
        errors=dict(zip(_PARAM_NAMES, errors)),
        reduced_chi2=red_chi2,
        converged=converged,
        n_evaluations=int(sol.nfev),
        message=message,
    )


@dataclass(frozen=True)
class AlphaFitResult:
    alpha_per_mm2: float
    alpha_sigma: float
    reduced_chi2: float
    converged: bool
    message: str = ""

    def to_json_dict(self):
        return {
            "schema_version": 1,
            "converged": self.converged,
            "alpha_per_mm2": self.alpha_per_mm2,
            "alpha_sigma": self.alpha_sigma,
            "reduced_chi2": self.reduced_chi2,
            "message": self.message,
        }


def fit_alpha(points, g_by_label, k, k0):
    """Turbulence strength from a visibility-vs-distance campaign.

    ``points`` are VisibilityPoint records; ``g_by_label`` maps each
    point's configuration label to its no-turbulence ceiling.  Weighted
    least squares over alpha alone; the 1-sigma interval comes from the
    objective curvature.  All points at zero distance leave alpha
    unidentifiable and produce an explicit failure.
    """
    pts = list(points)
    if len(pts) < 2:
        raise ValueError("need at least 2 visibility points")
    d = np.array([p.effective_distance_mm for p in pts])
    if np.allclose(d, 0.0):
        return AlphaFitResult(
            float("nan"), float("nan"), float("nan"), False,
            "alpha unidentifiable: all points at zero effective distance",
        )
    if np.unique(np.abs(d)).size < 2:
        raise ValueError("need at least 2 distinct |distance| values")
    v = np.array([p.visibility for p in pts])
    g = np.array([float(g_by_label[p.label]) for p in pts])
    sig = np.array([p.sigma_v if p.sigma_v > 0 else 1.0 for p in pts])
    c = d**2 / (2.0 * (k / k0) ** 2)

    def resid(a):
        return (g * np.exp(-a[0] * c) - v) / sig

    # Moment start: average log-attenuation over informative points.
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where((v > 0) & (g > 0), v / g, np.nan)
        logr = -np.log(ratio)
    mask = np.isfinite(logr) & (c > 0)
    a0 = float(np.clip(np.nansum(logr[mask]) / max(np.sum(c[mask]), 1e-12), 0.0, 1e3))
    sol = least_squares(
        resid,
        [a0],
        bounds=([0.0], [np.inf]),
        method="trf",
        ftol=OBJECTIVE_TOL,
        xtol=1e-14,
        max_nfev=MAX_ITERATIONS * 2,
    )
    dof = max(len(pts) - 1, 1)
    red_chi2 = float(2.0 * sol.cost / dof)
    err = _curvature_errors(sol.jac)[0]
    return AlphaFitResult(float(sol.x[0]), err, red_chi2, bool(sol.success), sol.message)


def slit_correction(visibility_raw, k0, slit_width_mm):
    """Undo the finite-slit attenuation of a fitted fringe visibility.

    A top-hat slit of width s multiplies the fringe contrast at wavenumber
    k0 by sin(k0 s / 2) / (k0 s / 2); this divides it back out.  Requires
    k0 * s / 2 < pi (slit narrower than the fringe period).
    """
    if slit_width_mm < 0:
        raise ValueError("slit width must be >= 0")
    if slit_width_mm == 0:
        return visibility_raw
    arg = k0 * slit_width_mm / 2.0
    if not arg < math.pi:
        raise ValueError("slit too wide: k0 * width / 2 must be < pi")
    factor = math.sin(arg) / arg
    if factor <= 0:
        raise ValueError("non-positive slit attenuation factor")
    return visibility_raw / factor
