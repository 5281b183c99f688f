"""Campaign orchestration and figure-data reproduction.

A campaign runs each turbulence sweep point through simulate -> fit,
collects visibility points next to the model curve, and emits a
replayable report: every number is a pure function of the configuration
hash and the master seed.  Points execute independently (optionally on a
thread pool); the report is assembled in sweep order, so worker count
never changes the output.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq

from . import __version__
from .config import ExperimentConfig, config_hash, config_to_dict
from .engine import KlyshkoPath
from .fitting import fit_scan, slit_correction
from .model import (
    OpticsConfig,
    TurbulenceSpec,
    VALIDITY_WARN_THRESHOLD,
    VisibilityPoint,
    effective_distance,
    fringe_visibility,
    validity_ratio,
)
from .scan import simulate_scan, write_scan_csv

__all__ = [
    "WORKERS_ENV_VAR",
    "CampaignPoint",
    "CampaignReport",
    "point_seed",
    "run_campaign",
    "write_report_json",
    "write_campaign_csv",
    "model_curve",
    "curve_crossing",
    "reproduce_figure",
]

WORKERS_ENV_VAR = "TURBGHOST_WORKERS"
_POINT_SEED_TAG = 0x9B1D


def _fmt(value):
    """Stable float formatting for byte-identical golden files."""
    return format(float(value), ".10g")


def point_seed(master_seed, index):
    """Per-point scan seed: a pure function of (master_seed, index)."""
    seq = np.random.SeedSequence((int(master_seed), _POINT_SEED_TAG, int(index)))
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class CampaignPoint:
    """One sweep point: simulated scan fit next to the model prediction."""

    index: int
    placement: str
    placement_distance_mm: float
    alpha_per_mm2: float
    effective_distance_mm: float
    model_visibility: float
    seed: int
    fitted_visibility: float | None = None
    fitted_sigma: float | None = None
    slit_factor: float = 1.0
    corrected_visibility: float | None = None
    corrected_sigma: float | None = None
    validity_ratio: float = 0.0
    validity_warning: bool = False
    converged: bool = False
    error: str | None = None

    def to_visibility_point(self, label=""):
        return VisibilityPoint(
            self.effective_distance_mm,
            self.corrected_visibility,
            self.corrected_sigma,
            label=label,
        )


@dataclass(frozen=True)
class CampaignReport:
    points: tuple
    curve_distances_mm: np.ndarray
    curve_visibilities: np.ndarray
    config_echo: dict
    config_digest: str
    master_seed: int
    version: str
    runtime_s: float

    def to_json_dict(self):
        return {
            "schema_version": 1,
            "version": self.version,
            "config_hash": self.config_digest,
            "master_seed": self.master_seed,
            "runtime_s": round(self.runtime_s, 3),
            "config": self.config_echo,
            "points": [asdict(p) for p in self.points],
            "curve": [
                {"d_mm": float(d), "V_model": float(v)}
                for d, v in zip(self.curve_distances_mm, self.curve_visibilities)
            ],
        }


def _run_point(config: ExperimentConfig, index, spec: TurbulenceSpec):
    optics = config.optics
    d = effective_distance(spec, optics)
    k = optics.k
    k0 = config.pattern.fringe_wavenumber
    v_model = fringe_visibility(optics.system_visibility, spec.alpha_per_mm2, d, k, k0)
    ratio = validity_ratio(d, spec.alpha_per_mm2, k, config.pattern.envelope_width_mm)
    seed = point_seed(config.engine.master_seed, index)
    placement = "crystal_side" if spec.side == "crystal" else "object_side"
    placement_distance = spec.l1_mm if spec.side == "crystal" else spec.distance_from_object_mm
    base = dict(
        index=index,
        placement=placement,
        placement_distance_mm=placement_distance,
        alpha_per_mm2=spec.alpha_per_mm2,
        effective_distance_mm=d,
        model_visibility=v_model,
        seed=seed,
        validity_ratio=ratio,
        validity_warning=ratio > VALIDITY_WARN_THRESHOLD,
    )
    try:
        path = KlyshkoPath(optics, spec, source_width_mm=config.engine.source_width_mm)
        data = simulate_scan(
            path,
            spec.alpha_per_mm2,
            config.pattern,
            config.detector,
            seed=seed,
            n_positions=config.engine.scan_points,
            center_mm=config.engine.scan_center_mm,
            mode=config.engine.mode,
        )
        result = fit_scan(data)
        if not result.converged:
            return CampaignPoint(**base, error=f"fit failed: {result.message}")
        factor_arg = k0 * config.detector.slit_width_mm / 2.0
        factor = math.sin(factor_arg) / factor_arg if factor_arg > 0 else 1.0
        corrected = slit_correction(
            result.model.visibility, k0, config.detector.slit_width_mm
        )
        sigma = result.errors.get("visibility", float("nan"))
        return CampaignPoint(
            **base,
            fitted_visibility=result.model.visibility,
            fitted_sigma=sigma,
            slit_factor=factor,
            corrected_visibility=min(corrected, 1.0),
            corrected_sigma=sigma / factor,
            converged=True,
        )
    except Exception as exc:  # per-point failure must not sink the campaign
        return CampaignPoint(**base, error=f"{type(exc).__name__}: {exc}")


def run_campaign(config: ExperimentConfig, workers=None):
    """Simulate and fit every sweep point; deterministic per master seed."""
    start = time.perf_counter()
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV_VAR, "1"))
    specs = list(config.sweep)
    if workers > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            points = list(
                pool.map(lambda iv: _run_point(config, iv[0], iv[1]), enumerate(specs))
            )
    else:
        points = [_run_point(config, i, spec) for i, spec in enumerate(specs)]
    if specs:
        dmax = max(abs(p.effective_distance_mm) for p in points)
        curve_d = np.linspace(0.0, max(dmax, 1.0), 101)
    else:
        curve_d = np.linspace(0.0, 1.0, 2)
    alpha_curve = specs[0].alpha_per_mm2 if specs else 0.0
    curve_v = np.array(
        [
            fringe_visibility(
                config.optics.system_visibility,
                alpha_curve,
                d,
                config.optics.k,
                config.pattern.fringe_wavenumber,
            )
            for d in curve_d
        ]
    )
    return CampaignReport(
        points=tuple(points),
        curve_distances_mm=curve_d,
        curve_visibilities=curve_v,
        config_echo=config_to_dict(config),
        config_digest=config_hash(config),
        master_seed=config.engine.master_seed,
        version=__version__,
        runtime_s=time.perf_counter() - start,
    )


def write_report_json(report: CampaignReport, path):
    import json

    with open(path, "w", encoding="ascii") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_campaign_csv(report: CampaignReport, path):
    """Per-point summary CSV: d_mm, V, sigma_V, V_model."""
    lines = ["d_mm,V,sigma_V,V_model"]
    for p in report.points:
        v = "" if p.corrected_visibility is None else _fmt(p.corrected_visibility)
        s = "" if p.corrected_sigma is None else _fmt(p.corrected_sigma)
        lines.append(
            f"{_fmt(p.effective_distance_mm)},{v},{s},{_fmt(p.model_visibility)}"
        )
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


# --- figure-data reproduction -------------------------------------------

_UNSHIFTED = dict(shift_mm=0.0, system_visibility=1.00, peak_rate_cps=200.0)
_SHIFTED = dict(shift_mm=330.0, system_visibility=0.65, peak_rate_cps=50.0)
_FIG_ALPHA = 2.0


def _paper_optics(shift_mm, system_visibility, **_):
    return OpticsConfig(shift_mm=shift_mm, system_visibility=system_visibility)


def model_curve(optics: OpticsConfig, alpha, distances_mm, k0):
    return np.array(
        [
            fringe_visibility(optics.system_visibility, alpha, d, optics.k, k0)
            for d in np.asarray(distances_mm, dtype=float)
        ]
    )


def curve_crossing(alpha, k0, lo_mm=50.0, hi_mm=329.0):
    """Crystal-side l1 where the shifted curve overtakes the unshifted one."""
    opt_u = _paper_optics(**_UNSHIFTED)
    opt_s = _paper_optics(**_SHIFTED)

    def gap(l1):
        vu = fringe_visibility(opt_u.system_visibility, alpha, l1 - opt_u.shift_mm, opt_u.k, k0)
        vs = fringe_visibility(opt_s.system_visibility, alpha, l1 - opt_s.shift_mm, opt_s.k, k0)
        return vu - vs

    return float(brentq(gap, lo_mm, hi_mm))


def _write_curve_csv(path, header, columns):
    lines = [header]
    for row in zip(*columns):
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def reproduce_figure(which, out_dir, master_seed=20260809):
    """Emit the model-curve (and for fig3, synthetic-scan) CSV data files.

    fig3: representative scans for both configurations with no turbulence,
    object-side turbulence (229 mm unshifted / 203 mm shifted from the
    object) and crystal-side turbulence 432 mm from the crystal.
    fig4: visibility vs turbulence-to-object distance, both configurations.
    fig5: visibility vs crystal-to-turbulence distance, both
    configurations, plus the central-image-plane marker and curve crossing.
    Returns the list of files written.
    """
    if which not in ("fig3", "fig4", "fig5"):
        raise ValueError("which must be one of fig3, fig4, fig5")
    os.makedirs(out_dir, exist_ok=True)
    from .model import ObjectPattern

    pattern = ObjectPattern()
    k0 = pattern.fringe_wavenumber
    written = []

    if which == "fig4":
        d = np.linspace(0.0, 250.0, 251)
        vu = model_curve(_paper_optics(**_UNSHIFTED), _FIG_ALPHA, d, k0)
        vs = model_curve(_paper_optics(**_SHIFTED), _FIG_ALPHA, d, k0)
        path = os.path.join(out_dir, "fig4_curve.csv")
        _write_curve_csv(path, "d_mm,V_unshifted,V_shifted", (d, vu, vs))
        written.append(path)

    if which == "fig5":
        l1 = np.linspace(0.0, 500.0, 501)
        opt_u = _paper_optics(**_UNSHIFTED)
        opt_s = _paper_optics(**_SHIFTED)
        vu = model_curve(opt_u, _FIG_ALPHA, l1 - opt_u.shift_mm, k0)
        vs = model_curve(opt_s, _FIG_ALPHA, l1 - opt_s.shift_mm, k0)
        path = os.path.join(out_dir, "fig5_curve.csv")
        _write_curve_csv(path, "l1_mm,V_unshifted,V_shifted", (l1, vu, vs))
        written.append(path)
        meta = os.path.join(out_dir, "fig5_markers.csv")
        crossing = curve_crossing(_FIG_ALPHA, k0)
        with open(meta, "w", encoding="ascii") as fh:
            fh.write("marker,l1_mm\n")
            fh.write(f"central_image_plane,{_fmt(_SHIFTED['shift_mm'])}\n")
            fh.write(f"curve_crossing,{_fmt(crossing)}\n")
        written.append(meta)

    if which == "fig3":
        detector_base = dict(slit_width_mm=0.040, slit_step_mm=0.005, integration_time_s=4.0)
        scenarios = []
        for tag, params in (("unshifted", _UNSHIFTED), ("shifted", _SHIFTED)):
            optics = _paper_optics(**params)
            d_obj = 229.0 if tag == "unshifted" else 203.0
            scenarios.extend(
                [
                    (f"fig3_{tag}_no_turbulence", optics, params,
                     TurbulenceSpec.object_side(0.0, 0.0)),
                    (f"fig3_{tag}_object_{int(d_obj)}mm", optics, params,
                     TurbulenceSpec.object_side(_FIG_ALPHA, d_obj)),
                    (f"fig3_{tag}_crystal_432mm", optics, params,
                     TurbulenceSpec.crystal_side(_FIG_ALPHA, 432.0)),
                ]
            )
        from .scan import DetectorModel

        for i, (name, optics, params, spec) in enumerate(scenarios):
            detector = DetectorModel(peak_rate_cps=params["peak_rate_cps"], **detector_base)
            path_obj = KlyshkoPath(optics, spec)
            data = simulate_scan(
                path_obj,
                spec.alpha_per_mm2,
                pattern,
                detector,
                seed=point_seed(master_seed, i),
                n_positions=160,
            )
            path = os.path.join(out_dir, f"{name}.csv")
            tmp = path + ".tmp"
            write_scan_csv(data, tmp)
            with open(tmp, "r", encoding="ascii") as fh:
                body = fh.read()
            os.remove(tmp)
            with open(path, "w", encoding="ascii") as fh:
                fh.write(f"# synthetic scan: {name}, seed={point_seed(master_seed, i)}\n")
                fh.write("# peak coincidence rate is an invented default, not a measured value\n")
                fh.write(body)
            written.append(path)

    return written
