"""Scenario files: JSON documents with unit-suffixed keys.

Parsing is strict. Unknown keys, wrong types and invalid values raise
:class:`ScenarioError` carrying the dotted key path of the offending entry.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .conic import SolverSettings
from .coords import CoordSet, coe_to_cart
from .dynamics import AccelerationModel, ModelKind, PropagatorSettings
from .errors import DomainError
from .problem import (BoundaryMode, FixedDeviation, GaussianState, MahalanobisBound,
                      ManeuverProblemSpec, Perfect, Window, sigma_trust)
from .uncertainty import Scheme


class ScenarioError(DomainError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass(frozen=True)
class DetectionOptions:
    confidences: tuple = (0.5, 0.68, 0.8, 0.9, 0.95, 0.99)
    decision_confidence: float = 0.95
    threshold_mps: float = 0.007


@dataclass(frozen=True)
class EstimationOptions:
    scheme: Scheme = Scheme.CUT4
    samples: int = 1000


@dataclass
class Scenario:
    name: str
    spec: ManeuverProblemSpec
    detection: DetectionOptions = DetectionOptions()
    estimation: EstimationOptions = EstimationOptions()
    output_dir: Optional[str] = None
    seed: int = 0
    raw: dict = field(default_factory=dict)


_TOP = {"name", "note", "model", "boundary0", "boundary_f", "coords", "n_segments",
        "dv_max_mps", "accel_max_mps2", "mode", "detection", "estimation", "window",
        "state_trust", "scp", "solver", "propagator", "output_dir", "seed"}


def _check_keys(obj: Any, key: str, allowed: set, required: set = frozenset()) -> dict:
    if not isinstance(obj, dict):
        raise ScenarioError(key, "expected an object")
    for k in obj:
        if k not in allowed:
            raise ScenarioError(f"{key}.{k}" if key else k, "unknown key")
    for k in required:
        if k not in obj:
            raise ScenarioError(f"{key}.{k}" if key else k, "missing required key")
    return obj


def _num(obj, key, positive=False, allow_none=False):
    if obj is None and allow_none:
        return None
    if isinstance(obj, bool) or not isinstance(obj, (int, float)) or not math.isfinite(obj):
        raise ScenarioError(key, "expected a finite number")
    if positive and not obj > 0:
        raise ScenarioError(key, "must be positive")
    return float(obj)


def _int(obj, key, minimum=None):
    if isinstance(obj, bool) or not isinstance(obj, int):
        raise ScenarioError(key, "expected an integer")
    if minimum is not None and obj < minimum:
        raise ScenarioError(key, f"must be >= {minimum}")
    return obj


def _vector(obj, key, n):
    if not isinstance(obj, list) or len(obj) != n:
        raise ScenarioError(key, f"expected a list of {n} numbers")
    return np.array([_num(v, f"{key}[{i}]") for i, v in enumerate(obj)])


def _matrix(obj, key, n):
    if not isinstance(obj, list) or len(obj) != n:
        raise ScenarioError(key, f"expected a {n}x{n} nested list")
    return np.array([_vector(row, f"{key}[{i}]", n) for i, row in enumerate(obj)])


def _model(obj, key="model") -> AccelerationModel:
    _check_keys(obj, key, {"kind", "mu_km3ps2", "j2", "body_radius_km"}, {"kind"})
    try:
        kind = ModelKind(obj["kind"])
    except ValueError:
        raise ScenarioError(f"{key}.kind", f"expected one of {[k.value for k in ModelKind]}") from None
    kw = {}
    if "mu_km3ps2" in obj:
        kw["mu"] = _num(obj["mu_km3ps2"], f"{key}.mu_km3ps2", positive=True)
    if "j2" in obj:
        kw["j2"] = _num(obj["j2"], f"{key}.j2")
    if "body_radius_km" in obj:
        kw["body_radius"] = _num(obj["body_radius_km"], f"{key}.body_radius_km", positive=True)
    return AccelerationModel(kind, **kw)


def _boundary(obj, key, mu) -> GaussianState:
    _check_keys(obj, key, {"epoch_s", "cartesian_km_kmps", "coe_km_rad", "covariance_km_kmps",
                           "frame"}, {"epoch_s", "covariance_km_kmps"})
    epoch = _num(obj["epoch_s"], f"{key}.epoch_s")
    has_cart, has_coe = "cartesian_km_kmps" in obj, "coe_km_rad" in obj
    if has_cart == has_coe:
        raise ScenarioError(key, "give exactly one of cartesian_km_kmps or coe_km_rad")
    if has_cart:
        mean = _vector(obj["cartesian_km_kmps"], f"{key}.cartesian_km_kmps", 6)
    else:
        el = _vector(obj["coe_km_rad"], f"{key}.coe_km_rad", 6)
        try:
            mean = coe_to_cart(el, mu)
        except DomainError as exc:
            raise ScenarioError(f"{key}.coe_km_rad", str(exc)) from None
    cov = _matrix(obj["covariance_km_kmps"], f"{key}.covariance_km_kmps", 6)
    try:
        return GaussianState(epoch, mean, cov)
    except DomainError as exc:
        raise ScenarioError(f"{key}.covariance_km_kmps" if "cov" in str(exc) else key,
                            str(exc)) from None


def _mode(obj, key="mode") -> BoundaryMode:
    _check_keys(obj, key, {"kind", "confidence", "delta"}, {"kind"})
    kind = obj["kind"]
    try:
        if kind == "perfect":
            _check_keys(obj, key, {"kind"})
            return Perfect()
        if kind == "mahalanobis":
            _check_keys(obj, key, {"kind", "confidence"}, {"confidence"})
            return MahalanobisBound(_num(obj["confidence"], f"{key}.confidence"))
        if kind == "fixed_deviation":
            _check_keys(obj, key, {"kind", "delta"}, {"delta"})
            return FixedDeviation(_vector(obj["delta"], f"{key}.delta", 12))
    except DomainError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(key, str(exc)) from None
    raise ScenarioError(f"{key}.kind", "expected perfect, mahalanobis or fixed_deviation")


def _section(obj, key, allowed):
    return _check_keys(obj if obj is not None else {}, key, allowed)


def parse(doc: dict, base_dir: Optional[Path] = None) -> Scenario:
    _check_keys(doc, "", _TOP, {"name", "model", "boundary0", "boundary_f"})
    name = doc["name"]
    if not isinstance(name, str) or not name:
        raise ScenarioError("name", "expected a non-empty string")
    model = _model(doc["model"])
    b0 = _boundary(doc["boundary0"], "boundary0", model.mu)
    bf = _boundary(doc["boundary_f"], "boundary_f", model.mu)
    if not bf.epoch > b0.epoch:
        raise ScenarioError("boundary_f.epoch_s", "must be later than boundary0.epoch_s")
    try:
        coords = CoordSet(doc.get("coords", "CC"))
    except ValueError:
        raise ScenarioError("coords", "expected CC, COE or MEE") from None
    n_seg = _int(doc.get("n_segments", 50), "n_segments", minimum=1)

    if "dv_max_mps" in doc and "accel_max_mps2" in doc:
        raise ScenarioError("dv_max_mps", "conflicts with accel_max_mps2")
    dv_max = math.inf
    if doc.get("dv_max_mps") is not None:
        dv_max = _num(doc["dv_max_mps"], "dv_max_mps", positive=True) * 1e-3
    if "accel_max_mps2" in doc:
        acc = _num(doc["accel_max_mps2"], "accel_max_mps2", positive=True)
        dv_max = acc * (bf.epoch - b0.epoch) / n_seg * 1e-3

    mode = _mode(doc["mode"]) if "mode" in doc else Perfect()

    scp = _section(doc.get("scp"), "scp", {"eps", "max_iter"})
    solver = _section(doc.get("solver"), "solver", {"max_iter", "feas_tol", "gap_tol"})
    prop = _section(doc.get("propagator"), "propagator", {"rel_tol", "abs_tol", "max_step_s"})
    try:
        solver_settings = SolverSettings(
            max_iter=_int(solver.get("max_iter", 100), "solver.max_iter", minimum=1),
            feas_tol=_num(solver.get("feas_tol", 1e-8), "solver.feas_tol", positive=True),
            gap_tol=_num(solver.get("gap_tol", 1e-8), "solver.gap_tol", positive=True))
        max_step = prop.get("max_step_s")
        prop_settings = PropagatorSettings(
            rel_tol=_num(prop.get("rel_tol", 1e-12), "propagator.rel_tol", positive=True),
            abs_tol=_num(prop.get("abs_tol", 1e-12), "propagator.abs_tol", positive=True),
            max_step=math.inf if max_step is None else _num(max_step, "propagator.max_step_s",
                                                             positive=True))
    except DomainError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError("propagator", str(exc)) from None

    window = None
    if doc.get("window") is not None:
        w = _check_keys(doc["window"], "window", {"center_search", "half_width_s"},
                        {"half_width_s"})
        cs_flag = w.get("center_search", True)
        if not isinstance(cs_flag, bool):
            raise ScenarioError("window.center_search", "expected true or false")
        window = Window(cs_flag, _num(w["half_width_s"], "window.half_width_s", positive=True))

    det = _section(doc.get("detection"), "detection",
                   {"confidences", "decision_confidence", "threshold_mps"})
    confs = det.get("confidences", list(DetectionOptions.confidences))
    if not isinstance(confs, list) or not confs:
        raise ScenarioError("detection.confidences", "expected a non-empty list")
    confs = tuple(_num(c, f"detection.confidences[{i}]") for i, c in enumerate(confs))
    if any(not 0 < c < 1 for c in confs) or any(b <= a for a, b in zip(confs, confs[1:])):
        raise ScenarioError("detection.confidences", "must be strictly increasing inside (0, 1)")
    default_decision = 0.95 if 0.95 in confs else confs[-1]
    decision = _num(det.get("decision_confidence", default_decision),
                    "detection.decision_confidence")
    if decision not in confs:
        raise ScenarioError("detection.decision_confidence", "must be one of the confidences")
    detection = DetectionOptions(confs, decision,
                                 _num(det.get("threshold_mps", 0.007), "detection.threshold_mps"))

    est = _section(doc.get("estimation"), "estimation", {"scheme", "samples"})
    try:
        scheme = Scheme(est.get("scheme", "cut4"))
    except ValueError:
        raise ScenarioError("estimation.scheme", "expected cut4, unscented or monte_carlo") from None
    estimation = EstimationOptions(scheme, _int(est.get("samples", 1000), "estimation.samples", 1))

    try:
        spec = ManeuverProblemSpec(
            boundary0=b0, boundaryF=bf, model=model, coords=coords, n_segments=n_seg,
            dv_max=dv_max, mode=mode,
            scp_eps=_num(scp.get("eps", 1e-6), "scp.eps", positive=True),
            scp_max_iter=_int(scp.get("max_iter", 15), "scp.max_iter", minimum=1),
            window=window, propagator=prop_settings, solver=solver_settings)
    except DomainError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError("", str(exc)) from None

    if doc.get("state_trust") is not None:
        tr = _check_keys(doc["state_trust"], "state_trust", {"sigma_multiple", "half_widths"})
        if len(tr) != 1:
            raise ScenarioError("state_trust", "give exactly one of sigma_multiple or half_widths")
        if "sigma_multiple" in tr:
            half = sigma_trust(spec, _num(tr["sigma_multiple"], "state_trust.sigma_multiple",
                                          positive=True))
        else:
            half = _vector(tr["half_widths"], "state_trust.half_widths", 6)
            if not np.all(half > 0):
                raise ScenarioError("state_trust.half_widths", "must be positive")
        spec = replace(spec, state_trust=half)

    out = doc.get("output_dir")
    if out is not None:
        if not isinstance(out, str):
            raise ScenarioError("output_dir", "expected a string")
        if base_dir is not None and not Path(out).is_absolute():
            out = str(base_dir / out)
    seed = _int(doc.get("seed", 0), "seed", minimum=0)
    note = doc.get("note", "")
    if not isinstance(note, str):
        raise ScenarioError("note", "expected a string")
    return Scenario(name, spec, detection, estimation, out, seed, doc)


def load(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError("", f"cannot read {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse(doc, path.parent)
