"""Regenerate the shipped scenario files from their synthetic truths.

Run from the repository root: ``python3 scripts/make_scenarios.py``.
Boundary means are written explicitly, so the scenario files do not depend on
this script at run time.
"""

import json
import math
from pathlib import Path

import numpy as np

from orbitlink.coords import coe_to_cart
from orbitlink.dynamics import MU_EARTH, AccelerationModel, propagate

OUT = Path(__file__).resolve().parent.parent / "scenarios"
GEO_R = 42164.17


def _cov(sig_pos, sig_vel):
    return np.diag([sig_pos ** 2] * 3 + [sig_vel ** 2] * 3).tolist()


def _boundary(epoch, state, cov):
    return {"epoch_s": epoch, "cartesian_km_kmps": [float(v) for v in state],
            "covariance_km_kmps": cov, "frame": "inertial, non-rotating"}


def _apply(model, x0, t0, burns, tf):
    """Propagate from t0 to tf applying (epoch, dv_vector_kmps) burns in order."""
    t, s = t0, np.array(x0, dtype=float)
    for tb, dv in burns:
        s = propagate(model, s, t, tb)
        s[3:] += dv
        t = tb
    return propagate(model, s, t, tf)


def _unit(v):
    return v / np.linalg.norm(v)


def write(name, doc):
    path = OUT / f"{name}.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    print("wrote", path)


def geo_scenarios():
    model = AccelerationModel.two_body()
    v = math.sqrt(MU_EARTH / GEO_R)
    x0 = np.array([GEO_R, 0, 0, 0, v, 0.0])
    T, tm = 36000.0, 18000.0
    xm = propagate(model, x0, 0.0, tm)
    dv = 1e-3 * _unit(np.cross(xm[:3], xm[3:]))
    xf = _apply(model, x0, 0.0, [(tm, dv)], T)
    cov = _cov(0.1, 1e-6)
    base = {
        "model": {"kind": "two_body"},
        "boundary0": _boundary(0.0, x0, cov),
        "boundary_f": _boundary(T, xf, cov),
        "coords": "CC",
        "n_segments": 600,
        "mode": {"kind": "perfect"},
        "scp": {"max_iter": 15},
    }
    write("geo_impulse", {"name": "geo_impulse",
                          "note": "GEO, Keplerian, 1 m/s normal impulse at t0 + 5 h, 1-min nodes",
                          **base})
    write("geo_lowthrust", {"name": "geo_lowthrust",
                            "note": "as geo_impulse with at most 6 mm/s per node",
                            **base, "dv_max_mps": 0.006})
    write("geo_window", {"name": "geo_window",
                         "note": "as geo_impulse, nodes restricted to +-1 h around the "
                                 "closest approach of the propagated means",
                         **{**base, "n_segments": 120},
                         "window": {"center_search": True, "half_width_s": 3600.0}})


def ballistic():
    model = AccelerationModel.two_body_j2()
    x0 = coe_to_cart([GEO_R, 2e-4, 1e-3, 1.0, 0.5, 0.3], MU_EARTH)
    T = 6 * 3600.0
    xf = propagate(model, x0, 0.0, T)
    cov = _cov(0.1, 1e-6)
    write("ballistic", {"name": "ballistic", "note": "ballistic-consistent boundaries",
                        "model": {"kind": "two_body_j2"},
                        "boundary0": _boundary(0.0, x0, cov), "boundary_f": _boundary(T, xf, cov),
                        "coords": "MEE", "n_segments": 36, "mode": {"kind": "perfect"}})


def detection_pairs():
    model = AccelerationModel.two_body_j2()
    x0 = coe_to_cart([GEO_R, 2e-4, 1e-3, 1.0, 0.5, 0.3], MU_EARTH)
    T, tm = 2 * 86400.0, 86400.0
    sig_p, sig_v = 0.1, 1e-6
    cov = _cov(sig_p, sig_v)
    chol = np.linalg.cholesky(np.array(cov))
    common = {"model": {"kind": "two_body_j2"}, "coords": "CC", "n_segments": 48,
              "scp": {"max_iter": 15},
              "detection": {"confidences": [0.5, 0.68, 0.8, 0.9, 0.95, 0.99],
                            "decision_confidence": 0.95, "threshold_mps": 0.007}}
    for name, dv_mps, seed, note in (
            ("detect_nomaneuver", 0.0, 6, "ballistic truth, noisy boundary means"),
            ("detect_maneuver", 0.15, 1, "0.15 m/s along-track impulse at t0 + 24 h, "
                                          "noisy boundary means")):
        xm = propagate(model, x0, 0.0, tm)
        xf = _apply(model, x0, 0.0, [(tm, dv_mps * 1e-3 * _unit(xm[3:]))], T)
        rng = np.random.default_rng(seed)
        m0 = x0 + chol @ rng.standard_normal(6)
        mf = xf + chol @ rng.standard_normal(6)
        doc = {"name": name, "note": note, **common,
               "boundary0": _boundary(0.0, m0, cov), "boundary_f": _boundary(T, mf, cov)}
        write(name, doc)
        if dv_mps > 0:
            for scheme in ("unscented", "cut4"):
                est = {**doc, "name": f"ewsk_{scheme}",
                       "note": "east-west station-keeping analog: " + note,
                       "estimation": {"scheme": scheme}}
                est.pop("detection")
                write(f"ewsk_{scheme}", est)


def zero_covariance():
    model = AccelerationModel.two_body()
    x0 = coe_to_cart([GEO_R, 1e-3, 0.05, 0.2, 0.4, 0.1], MU_EARTH)
    T = 4 * 3600.0
    xm = propagate(model, x0, 0.0, 7200.0)
    xf = _apply(model, x0, 0.0, [(7200.0, 5e-5 * _unit(xm[3:]))], T)
    zero = np.zeros((6, 6)).tolist()
    write("zero_covariance", {"name": "zero_covariance",
                              "note": "exact boundary states, 0.05 m/s along-track impulse",
                              "model": {"kind": "two_body"},
                              "boundary0": _boundary(0.0, x0, zero),
                              "boundary_f": _boundary(T, xf, zero),
                              "coords": "CC", "n_segments": 8,
                              "estimation": {"scheme": "unscented"}})
    write("cut4_small", {"name": "cut4_small",
                         "note": "two-segment problem (two usable impulses) for a full 4121-point CUT-4 run",
                         "model": {"kind": "two_body"},
                         "boundary0": _boundary(0.0, x0, _cov(0.01, 1e-7)),
                         "boundary_f": _boundary(600.0, propagate(model, x0, 0.0, 600.0),
                                                 _cov(0.01, 1e-7)),
                         "coords": "CC", "n_segments": 2,
                         "estimation": {"scheme": "cut4"}})


def gto_raise():
    model = AccelerationModel.two_body()
    x0 = coe_to_cart([24326.0, 0.7284, 0.1, 0.3, 0.5, 0.2], MU_EARTH)
    T, n = 86400.0, 50
    epochs = np.linspace(0.0, T, n + 1)
    s = x0.copy()
    for i in range(n):
        s = s.copy()
        s[3:] += 0.18e-3 * _unit(s[3:])
        s = propagate(model, s, epochs[i], epochs[i + 1])
    cov = _cov(0.1, 1e-6)
    for coords in ("CC", "COE", "MEE"):
        name = f"gto_raise_{coords.lower()}"
        write(name, {"name": name,
                     "note": "GTO-like low-thrust raise: 0.18 m/s along-track at every node, "
                             "reconstructed with a 0.22 mm/s^2 acceleration cap",
                     "model": {"kind": "two_body"},
                     "boundary0": _boundary(0.0, x0, cov), "boundary_f": _boundary(T, s, cov),
                     "coords": coords, "n_segments": n, "accel_max_mps2": 0.22e-3,
                     "mode": {"kind": "perfect"}, "scp": {"max_iter": 15}})


if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    geo_scenarios()
    ballistic()
    detection_pairs()
    zero_covariance()
    gto_raise()
