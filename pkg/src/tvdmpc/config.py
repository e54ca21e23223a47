"""JSON run configuration: parsing, schema validation and cross-checks.

The schema lives in ``schemas/config.schema.json`` next to this module.
Validation happens in three layers, all before any numerical work: JSON
syntax (reported with line and column), the schema (reported with the
offending field path) and cross-references such as matrix shapes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .controllers import KINDS, ControllerKind, ControlProblemSpec
from .dynamics import LinearSystemModel
from .errors import ConfigError, TvdMpcError
from .montecarlo import CampaignConfig, Cell
from .risk import DiscreteDistribution
from .tightening import AUTO, TAIL_BUDGET, PolytopeConstraint

CONFIG_FORMAT_VERSION = 1
DEFAULT_HORIZON = 4


def config_schema():
    text = resources.files("tvdmpc").joinpath("schemas/config.schema.json").read_text()
    return json.loads(text)


def _field(path):
    return "/".join(str(p) for p in path) or "<root>"


def parse_config_text(text, source="<config>"):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(config_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{source}: field '{_field(e.absolute_path)}': {e.message}" for e in errors[:10]]
        raise ConfigError("\n".join(lines))
    return doc


@dataclass(eq=False)
class RunConfig:
    """A validated configuration plus the objects built from it."""

    doc: dict
    campaign: CampaignConfig
    margin_mode: str = "cvar"
    out_dir: str | None = None
    trajectories: bool = True
    threads: int = 1
    source: str = "<config>"
    overrides: dict = field(default_factory=dict)

    @property
    def spec(self):
        return self.campaign.spec


def _polytope(node, where):
    if "F" in node:
        F = np.asarray(node["F"], dtype=float)
        g = np.asarray(node["g"], dtype=float)
        if F.shape[0] != g.size:
            raise ConfigError(f"field '{where}': F has {F.shape[0]} rows but g has {g.size} entries")
        return PolytopeConstraint(F, g)
    lo = np.asarray(node["lower"], dtype=float)
    hi = np.asarray(node["upper"], dtype=float)
    if lo.size != hi.size:
        raise ConfigError(f"field '{where}': lower and upper differ in length")
    if np.any(hi < lo):
        raise ConfigError(f"field '{where}': upper < lower")
    return PolytopeConstraint.box(lo, hi)


def _matrix(rows, where):
    try:
        return np.array(rows, dtype=float)
    except ValueError:
        raise ConfigError(f"field '{where}': rows have different lengths") from None


def build_run_config(doc, source="<config>", zeta_mode=None, margin_mode=None, seed=None,
                     out_dir=None, threads=None):
    """Turn a schema-valid document into objects; CLI overrides take precedence."""
    try:
        A = _matrix(doc["system"]["A"], "system/A")
        n = A.shape[0]
        if A.ndim != 2 or A.shape != (n, n):
            raise ConfigError(f"field 'system/A': must be square, got shape {A.shape}")
        B = _matrix(doc["system"]["B"], "system/B")
        D = _matrix(doc["system"]["D"], "system/D")
        for name, M in (("B", B), ("D", D)):
            if M.size % n:
                raise ConfigError(f"field 'system/{name}': size {M.size} is not a multiple of n_x = {n}")
        B, D = B.reshape(n, -1), D.reshape(n, -1)
        sys = LinearSystemModel(A, B, D)
        state_con = _polytope(doc["state_constraints"], "state_constraints")
        input_con = _polytope(doc["input_constraints"], "input_constraints")
        if state_con.dim != n:
            raise ConfigError(f"field 'state_constraints': dimension {state_con.dim} != n_x = {n}")
        if input_con.dim != sys.n_u:
            raise ConfigError(f"field 'input_constraints': dimension {input_con.dim} != n_u = {sys.n_u}")
        atoms = np.asarray(doc["disturbance"]["atoms"], dtype=float)
        probs = np.asarray(doc["disturbance"]["probs"], dtype=float)
        if atoms.shape[0] != probs.size:
            raise ConfigError(f"field 'disturbance': {atoms.shape[0]} atoms but {probs.size} masses")
        dist = DiscreteDistribution(atoms, probs)
        if dist.n_d != sys.n_d:
            raise ConfigError(f"field 'disturbance/atoms': dimension {dist.n_d} != n_d = {sys.n_d}")
        cost = doc.get("cost", {})
        Q = np.asarray(cost.get("Q", np.eye(n)), dtype=float)
        R = np.asarray(cost.get("R", 0.1 * np.eye(sys.n_u)), dtype=float)
        if Q.shape != (n, n):
            raise ConfigError(f"field 'cost/Q': expected {n}x{n}, got {Q.shape}")
        if R.shape != (sys.n_u, sys.n_u):
            raise ConfigError(f"field 'cost/R': expected {sys.n_u}x{sys.n_u}, got {R.shape}")

        camp = doc["campaign"]
        grid = [Cell(float(c["epsilon"]), float(c["alpha"])) for c in camp["grid"]]
        if len(set(grid)) != len(grid):
            raise ConfigError("field 'campaign/grid': duplicate (epsilon, alpha) cells")
        spec = ControlProblemSpec(sys, state_con, input_con, Q, R, int(doc.get("horizon", DEFAULT_HORIZON)),
                                  grid[0].epsilon, max(grid[0].alpha, 0.0), dist)

        modes = doc.get("modes", {})
        zmode = zeta_mode or modes.get("zeta_mode", AUTO)
        mmode = margin_mode or modes.get("margin_mode", "cvar")
        tail = modes.get("tail_convention", TAIL_BUDGET)
        opts = doc.get("controller_options", {})
        kinds = []
        for tag in doc.get("controllers", list(KINDS)):
            o = dict(opts.get(tag, {}))
            if tag == "drmpc":
                o["margin_mode"] = mmode
            kinds.append(ControllerKind(tag, zeta_mode=zmode, tail_convention=tail, **o))

        box = camp.get("x0_box")
        x0_lo = np.asarray(box["lower"], dtype=float) if box else np.zeros(n)
        x0_hi = np.asarray(box["upper"], dtype=float) if box else np.zeros(n)
        if x0_lo.size != n or x0_hi.size != n:
            raise ConfigError(f"field 'campaign/x0_box': dimension must be n_x = {n}")
        adv = camp.get("adversarial_cost")
        if adv is not None and len(adv) != dist.J:
            raise ConfigError(f"field 'campaign/adversarial_cost': needs {dist.J} entries")
        campaign = CampaignConfig(
            spec=spec, controllers=tuple(kinds), cells=tuple(grid),
            trials=int(camp.get("trials", 100)), steps=int(camp.get("steps", 35)),
            x0_low=x0_lo, x0_high=x0_hi,
            seed=int(seed if seed is not None else camp.get("seed", 0)),
            perturbation=camp.get("perturbation", "random-in-ball"),
            nominal_alpha=float(camp.get("nominal_alpha", 0.1)),
            zeta_mode=zmode, tail_convention=tail,
            adversarial_cost=None if adv is None else np.asarray(adv, dtype=float))
    except ConfigError:
        raise
    except TvdMpcError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    out = doc.get("output", {})
    return RunConfig(doc=doc, campaign=campaign, margin_mode=mmode,
                     out_dir=out_dir or out.get("dir"), trajectories=out.get("trajectories", True),
                     threads=int(threads or out.get("threads", 1)), source=source,
                     overrides={"zeta_mode": zeta_mode, "margin_mode": margin_mode, "seed": seed})


def load_config(path, **overrides):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return build_run_config(parse_config_text(text, str(path)), str(path), **overrides)
