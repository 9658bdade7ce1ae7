"""Run configuration: a sectioned YAML document mapped onto domain objects.

Sections: plant, controller, saturation, reference, sim, output, checks.
Parsing is strict about presence and cross-field dimension consistency; a
bad document raises ConfigInvalid (the CLI maps that to exit code 4).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .controller import Saturation
from .errors import ConfigInvalid
from .params import FunnelParams, Surjection, validate_params
from .plants import LinearBIF, MassOnCar, ReferenceSignal, ScalarPrototype
from .sim import SimConfig

__all__ = [
    "RunConfig",
    "parse_config",
    "load_config",
    "serialize_config",
    "build_params",
    "build_plant",
    "build_saturation",
    "build_reference",
    "build_sim_config",
    "initial_state",
]

_SECTIONS = ("plant", "controller", "saturation", "reference", "sim")
_DEFAULT_CHECKS = ["membership", "lower_ratio", "recovery"]


@dataclass
class RunConfig:
    plant: dict
    controller: dict
    saturation: dict
    reference: dict
    sim: dict
    output: dict = field(default_factory=dict)
    checks: list = field(default_factory=lambda: list(_DEFAULT_CHECKS))

    def to_dict(self) -> dict:
        return {
            "plant": dict(self.plant),
            "controller": dict(self.controller),
            "saturation": dict(self.saturation),
            "reference": dict(self.reference),
            "sim": dict(self.sim),
            "output": dict(self.output),
            "checks": list(self.checks),
        }


def parse_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"config is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigInvalid("config must be a mapping of sections")
    missing = [s for s in _SECTIONS if s not in data]
    if missing:
        raise ConfigInvalid(f"missing config sections: {', '.join(missing)}")
    rc = RunConfig(
        plant=dict(data["plant"]),
        controller=dict(data["controller"]),
        saturation=dict(data["saturation"]),
        reference=dict(data["reference"]),
        sim=dict(data["sim"]),
        output=dict(data.get("output", {})),
        checks=list(data.get("checks", _DEFAULT_CHECKS)),
    )
    # fail early on anything inconsistent
    validate_config(rc)
    return rc


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def serialize_config(rc: RunConfig) -> str:
    return yaml.safe_dump(rc.to_dict(), sort_keys=True, default_flow_style=None)


def validate_config(rc: RunConfig) -> None:
    params = build_params(rc)
    plant = build_plant(rc)
    build_saturation(rc)
    build_reference(rc, plant.m)
    build_sim_config(rc)
    initial_state(rc, plant)
    if plant.r != params.r:
        raise ConfigInvalid(
            f"plant order r={plant.r} disagrees with controller order r={params.r}")
    if plant.m != params.m:
        raise ConfigInvalid(
            f"plant output dimension m={plant.m} disagrees with controller m={params.m}")


def build_params(rc: RunConfig) -> FunnelParams:
    c = rc.controller
    try:
        surj = c.get("surjection", {"kind": "neg_s2_cos"})
        if isinstance(surj, str):
            surj = {"kind": surj}
        params = FunnelParams(
            alpha=tuple(c["alpha"]),
            beta=tuple(c["beta"]),
            p=tuple(c.get("p", [])),
            psi0=tuple(c["psi0"]),
            surjection=Surjection(kind=surj.get("kind", "neg_s2_cos"),
                                  sigma=int(surj.get("sigma", -1))),
            m=int(c.get("m", 1)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"controller section invalid: {exc}") from exc
    violations = validate_params(params)
    if violations:
        raise ConfigInvalid("controller parameters invalid: " + "; ".join(violations))
    return params


def build_plant(rc: RunConfig):
    p = rc.plant
    kind = p.get("kind")
    try:
        if kind == "mass_on_car":
            return MassOnCar(m1=float(p["m1"]), m2=float(p["m2"]),
                             k=float(p["k"]), d=float(p["d"]),
                             theta=float(p["theta"]))
        if kind == "linear_bif":
            R = np.asarray(p["R"], dtype=float)
            if R.ndim == 1:
                R = R.reshape(-1, 1, 1)
            r, m = R.shape[0], R.shape[1]
            q = int(p.get("q", len(p.get("eta0", []))))
            return LinearBIF(
                R=R,
                S=np.asarray(p.get("S", np.zeros((m, q))), dtype=float).reshape(m, q),
                P=np.asarray(p.get("P", np.zeros((q, m))), dtype=float).reshape(q, m),
                Q=np.asarray(p.get("Q", np.zeros((q, q))), dtype=float).reshape(q, q),
                Gamma=np.asarray(p.get("Gamma", np.eye(m)), dtype=float).reshape(m, m),
                eta0=np.asarray(p.get("eta0", np.zeros(q)), dtype=float).reshape(q),
            )
        if kind == "scalar_prototype":
            return ScalarPrototype(y0=float(p.get("y0", 1.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"plant section invalid: {exc}") from exc
    raise ConfigInvalid(f"unknown plant kind {kind!r}")


def build_saturation(rc: RunConfig) -> Saturation:
    s = rc.saturation
    kind = s.get("kind", "identity")
    try:
        if kind == "identity":
            return Saturation(kind="identity")
        return Saturation(kind=kind, level=float(s["level"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"saturation section invalid: {exc}") from exc


def build_reference(rc: RunConfig, m: int) -> ReferenceSignal:
    rf = rc.reference
    try:
        return ReferenceSignal(
            kind=rf.get("kind", "cosine"),
            m=m,
            amplitude=float(rf.get("amplitude", 1.0)),
            coeffs=tuple(rf.get("coeffs", ())),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"reference section invalid: {exc}") from exc


def build_sim_config(rc: RunConfig) -> SimConfig:
    s = rc.sim
    try:
        cfg = SimConfig(
            t_end=float(s["t_end"]),
            rel_tol=float(s.get("rel_tol", 1e-10)),
            abs_tol=float(s.get("abs_tol", 1e-8)),
            h_init=float(s.get("h_init", 1e-3)),
            h_min=float(s.get("h_min", 1e-12)),
            h_max=float(s.get("h_max", 0.1)),
            barrier_margin=float(s.get("barrier_margin", 0.1)),
            blowup_norm=float(s.get("blowup_norm", 1e6)),
            record_stride=float(s.get("record_stride", 0.01)),
        )
        cfg.validate()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"sim section invalid: {exc}") from exc
    return cfg


def initial_state(rc: RunConfig, plant) -> np.ndarray:
    init = rc.plant.get("init")
    if init is None:
        if isinstance(plant, ScalarPrototype):
            return np.array([plant.y0])
        init = np.zeros(plant.state_dim)
        if isinstance(plant, LinearBIF) and plant.q:
            init[plant.r * plant.m:] = plant.eta0
        return init
    init = np.asarray(init, dtype=float)
    if init.shape != (plant.state_dim,):
        raise ConfigInvalid(
            f"plant init must have length {plant.state_dim}, got {init.shape}")
    return init
