"""Experiment configuration: presets, validation and scenario assembly.

A configuration is a nested mapping with the sections ``process``,
``target``, ``basis``, ``preconditioner`` and ``schedule`` plus a few run
level keys.  It is read from TOML, merged over the preset named by
``scenario`` and fully validated before anything is computed.  Validation
errors raise :class:`~psgm.errors.ConfigError` carrying the dotted key.
"""

import copy
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import analysis, numerics, sampling
from . import basis as bases
from .engine import Constant, EvaluationSet, InverseDecay, RunConfig, SwitchAt
from .errors import ConfigError
from .regularization import PreconditionerSpec, first_difference, no_constraint

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SCENARIOS = ("crf", "equalizer", "custom")

# Run-level keys and their types.
TOP_LEVEL = {
    "scenario": str,
    "seed": int,
    "steps": int,
    "batch_size": int,
    "oracle": str,
    "oracle_samples": int,
    "eval_samples": int,
    "replicas": int,
    "normalized": bool,
    "allow_inadmissible": bool,
    "full_scale_steps": int,
    "full_scale_oracle_samples": int,
    "full_scale_lut_size": int,
}

SECTION_KEYS = {
    "process": {
        "kind": str, "means": list, "sigmas": list, "weights": list, "lo": float,
        "hi": float, "rho": float, "sigma": float, "points": list,
    },
    "target": {
        "kind": str, "gamma": float, "power": float, "kernel": list, "a3": float,
        "a5": float, "noise_sigma": float, "snr_db": float, "equalize": bool,
    },
    "basis": {
        "kind": str, "size": int, "lo": float, "hi": float, "taps": list, "gain": bool,
        "fit_samples": int,
    },
    "preconditioner": {"b": str, "constraint": str, "gamma": float},
    "schedule": {
        "kind": str, "mu": float, "mu0": float, "switch": int, "lambda0": float,
        "mu_hat0": float,
    },
}

CHOICES = {
    "scenario": SCENARIOS,
    "oracle": ("monte_carlo", "quadrature", "none"),
    "process.kind": ("mixture", "uniform", "stream", "discrete"),
    "target.kind": ("gamma", "identity", "power", "channel"),
    "basis.kind": ("monomial", "orthogonal", "lut"),
    "preconditioner.b": ("identity", "diag", "full"),
    "preconditioner.constraint": ("first_difference", "none"),
    "schedule.kind": ("constant", "inverse_decay", "switch"),
}

PRESETS = {
    # Camera response curve: 10 orthogonal polynomials, B = I with a
    # first-difference constraint, constant step then 1/(k - 1000).
    "crf": {
        "scenario": "crf",
        "seed": 0,
        "steps": 50_000,
        "full_scale_steps": 500_000,
        "batch_size": 1000,
        "oracle": "monte_carlo",
        "oracle_samples": 1_000_000,
        "full_scale_oracle_samples": 50_000_000,
        "eval_samples": 0,
        "replicas": 500,
        "normalized": True,
        "allow_inadmissible": False,
        "process": {"kind": "mixture", "means": [0.3, 0.6], "sigmas": [0.01, 0.007],
                    "weights": [0.5, 0.5], "lo": 0.0, "hi": 1.0},
        "target": {"kind": "gamma", "gamma": 1 / 5.5, "noise_sigma": 0.0},
        "basis": {"kind": "orthogonal", "size": 10, "lo": 0.0, "hi": 1.0,
                  "fit_samples": 100_000},
        "preconditioner": {"b": "identity", "constraint": "first_difference", "gamma": 0.02},
        "schedule": {"kind": "switch", "mu0": 0.01, "switch": 1000},
    },
    # Nonlinear equalizer: five gain-LUT taps, diag(A) plus a first-difference
    # constraint per tap, constant step 0.1.
    "equalizer": {
        "scenario": "equalizer",
        "seed": 0,
        "steps": 10_000,
        "full_scale_steps": 10_000,
        "batch_size": 1000,
        "oracle": "monte_carlo",
        "oracle_samples": 1_000_000,
        "full_scale_oracle_samples": 1_000_000,
        "full_scale_lut_size": 1024,
        "eval_samples": 260_000,
        "replicas": 500,
        "normalized": True,
        # diag(A) + gamma C is SPD, so the iteration matrix has a positive real
        # spectrum, but the sphere test on its symmetric part dips below zero at
        # M = 320. The run proceeds and records the warning.
        "allow_inadmissible": True,
        "process": {"kind": "stream", "rho": 0.5, "sigma": 0.26, "lo": -1.0, "hi": 1.0},
        "target": {"kind": "channel", "kernel": [0.05, -0.15, 1.0, 0.2, -0.05],
                   "a3": -0.08, "a5": 0.01, "snr_db": 35.0, "equalize": True},
        "basis": {"kind": "lut", "size": 64, "lo": -1.0, "hi": 1.0,
                  "taps": [-2, -1, 0, 1, 2], "gain": True},
        "preconditioner": {"b": "diag", "constraint": "first_difference", "gamma": 0.02},
        "schedule": {"kind": "constant", "mu": 0.1},
    },
}

# Run-level defaults for custom scenarios; the sections come from the file.
CUSTOM_DEFAULTS = {
    "scenario": "custom",
    "seed": 0,
    "steps": 1000,
    "batch_size": 1000,
    "oracle": "monte_carlo",
    "oracle_samples": 1_000_000,
    "eval_samples": 0,
    "replicas": 500,
    "normalized": True,
    "allow_inadmissible": False,
    "preconditioner": {"b": "identity", "constraint": "none", "gamma": 0.0},
}


def preset(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}",
                          "scenario")
    return copy.deepcopy(PRESETS[name])


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _check_type(key, value, kind):
    if kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ConfigError(f"{key} must be of type {kind.__name__}, got {value!r}", key)


def _require(cond, key, message):
    if not cond:
        raise ConfigError(f"{key}: {message}", key)


def validate(raw):
    """Merge ``raw`` over its scenario defaults and validate every key.

    Returns the resolved configuration dictionary.
    """
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a table")
    scenario = raw.get("scenario", "custom")
    _check_type("scenario", scenario, str)
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}, got {scenario!r}", "scenario")
    base = preset(scenario) if scenario in PRESETS else copy.deepcopy(CUSTOM_DEFAULTS)

    for key, value in raw.items():
        if key in SECTION_KEYS:
            _check_type(key, value, dict)
            for sub in value:
                if sub not in SECTION_KEYS[key]:
                    raise ConfigError(f"unknown key {key}.{sub}", f"{key}.{sub}")
        elif key not in TOP_LEVEL:
            raise ConfigError(f"unknown key {key}", key)
    # A different section kind replaces the preset section instead of merging.
    for section in SECTION_KEYS:
        if section in raw and "kind" in raw[section] and \
                raw[section]["kind"] != base.get(section, {}).get("kind"):
            base.pop(section, None)
    cfg = _merge(base, raw)

    for key, kind in TOP_LEVEL.items():
        if key in cfg:
            _check_type(key, cfg[key], kind)
    for section, keys in SECTION_KEYS.items():
        _require(section in cfg, section, "section is missing")
        for sub, kind in keys.items():
            if sub in cfg[section]:
                _check_type(f"{section}.{sub}", cfg[section][sub], kind)
    for key, allowed in CHOICES.items():
        section, _, sub = key.rpartition(".")
        value = cfg[section].get(sub) if section else cfg.get(sub)
        _require(value in allowed, key, f"must be one of {allowed}, got {value!r}")

    _require(cfg["steps"] >= 0, "steps", "must be non-negative")
    _require(cfg["batch_size"] >= 1, "batch_size", "must be at least 1")
    _require(cfg["seed"] >= 0, "seed", "must be non-negative")
    _require(cfg["replicas"] >= 1, "replicas", "must be positive")
    _require(cfg["eval_samples"] >= 0, "eval_samples", "must be non-negative")
    if cfg["oracle"] == "monte_carlo":
        _require(cfg["oracle_samples"] >= 10_000, "oracle_samples", "must be at least 10^4")
    _validate_process(cfg["process"])
    _validate_target(cfg["target"])
    _validate_basis(cfg["basis"])
    _validate_preconditioner(cfg["preconditioner"], cfg["basis"])
    _validate_schedule(cfg["schedule"])
    return cfg


def _need(section, name, keys):
    for k in keys:
        _require(k in section, f"{name}.{k}", "is required")


def _validate_process(p):
    kind = p["kind"]
    if kind == "mixture":
        _need(p, "process", ("means", "sigmas"))
        _require(len(p["means"]) == len(p["sigmas"]) > 0, "process.sigmas",
                 "needs one sigma per mean")
        _require(all(s > 0 for s in p["sigmas"]), "process.sigmas", "must be positive")
        if "weights" in p:
            w = p["weights"]
            _require(len(w) == len(p["means"]) and all(x > 0 for x in w)
                     and abs(sum(w) - 1) < 1e-12, "process.weights",
                     "must be positive, one per mean, summing to 1")
    elif kind == "stream":
        _need(p, "process", ("rho", "sigma"))
        _require(abs(p["rho"]) < 1, "process.rho", "must satisfy |rho| < 1")
        _require(p["sigma"] > 0, "process.sigma", "must be positive")
    elif kind == "discrete":
        _need(p, "process", ("points",))
        _require(len(p["points"]) > 0, "process.points", "must not be empty")
    if "lo" in p and "hi" in p:
        _require(p["hi"] > p["lo"], "process.hi", "must exceed process.lo")


def _validate_target(t):
    for key in ("noise_sigma",):
        if key in t:
            _require(t[key] >= 0, f"target.{key}", "must be non-negative")
    if t["kind"] == "gamma":
        _require(t.get("gamma", 1 / 5.5) > 0, "target.gamma", "must be positive")
    if t["kind"] == "channel":
        k = t.get("kernel", [0, 0, 1, 0, 0])
        _require(len(k) % 2 == 1 and len(k) <= 5, "target.kernel",
                 "must have an odd length of at most 5")


def _validate_basis(b):
    _need(b, "basis", ("size",))
    _require(b["size"] >= 1, "basis.size", "must be at least 1")
    if "lo" in b and "hi" in b:
        _require(b["hi"] > b["lo"], "basis.hi", "must exceed basis.lo")
    if "taps" in b:
        taps = b["taps"]
        _require(len(taps) > 0 and len(set(taps)) == len(taps)
                 and all(isinstance(t, int) for t in taps), "basis.taps",
                 "must be distinct integers")
    if b["kind"] == "orthogonal":
        _require(b.get("fit_samples", 100_000) >= 100 * max(b["size"] - 1, 1),
                 "basis.fit_samples", "must be at least 100 per degree")


def _validate_preconditioner(p, basis):
    _require(p.get("gamma", 0.0) >= 0, "preconditioner.gamma", "must be non-negative")
    if p.get("constraint", "none") == "first_difference":
        _require(basis["size"] >= 2, "basis.size",
                 "first-difference constraint needs at least 2 coefficients")


def _validate_schedule(s):
    kind = s["kind"]
    if kind == "constant":
        _need(s, "schedule", ("mu",))
        _require(s["mu"] > 0, "schedule.mu", "must be positive")
    elif kind == "switch":
        _need(s, "schedule", ("mu0", "switch"))
        _require(s["mu0"] > 0, "schedule.mu0", "must be positive")
        _require(s["switch"] >= 0, "schedule.switch", "must be non-negative")
    else:
        for key in ("lambda0", "mu_hat0"):
            if key in s:
                _require(s[key] > 0, f"schedule.{key}", "must be positive")


def load(path):
    """Read a TOML file and validate it."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path} is not valid TOML: {exc}") from None
    return validate(raw)


def apply_full_scale(cfg):
    """Switch a resolved config to the full-scale sizes stored with its preset."""
    out = copy.deepcopy(cfg)
    if "full_scale_steps" in out:
        out["steps"] = out["full_scale_steps"]
    if "full_scale_oracle_samples" in out:
        out["oracle_samples"] = out["full_scale_oracle_samples"]
    if "full_scale_lut_size" in out and out["basis"]["kind"] == "lut":
        out["basis"]["size"] = out["full_scale_lut_size"]
    return out


def config_hash(cfg):
    """Short SHA-256 of the canonical JSON form of a resolved config."""
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def dump_toml(cfg):
    """Render a resolved config as TOML (flat keys first, then one table per section)."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return str(v)

    lines = [f"{k} = {fmt(v)}" for k, v in cfg.items() if not isinstance(v, dict)]
    for k, v in cfg.items():
        if isinstance(v, dict):
            lines.append("")
            lines.append(f"[{k}]")
            lines.extend(f"{sk} = {fmt(sv)}" for sk, sv in v.items())
    return "\n".join(lines) + "\n"


# --- assembly -------------------------------------------------------------------


@dataclass
class Scenario:
    """Library objects built from a resolved configuration."""

    config: dict
    process: object
    target: object
    basis: object
    spec: object
    schedule: object
    oracle: object
    a_ref: object
    evaluation: object

    def run_config(self, **overrides):
        kw = dict(
            process=self.process, target=self.target, basis=self.basis,
            preconditioner=self.spec, schedule=self.schedule,
            n=self.config["batch_size"], steps=self.config["steps"],
            seed=self.config["seed"], oracle=self.oracle, a_ref=self.a_ref,
            evaluation=self.evaluation, normalized=self.config["normalized"],
            allow_inadmissible=self.config["allow_inadmissible"],
        )
        kw.update(overrides)
        return RunConfig(**kw)


def build_process(p, seed=0):
    kind = p["kind"]
    if kind == "mixture":
        w = tuple(p["weights"]) if "weights" in p else None
        return sampling.GaussianMixture(tuple(p["means"]), tuple(p["sigmas"]), w,
                                        p.get("lo", 0.0), p.get("hi", 1.0), seed)
    if kind == "uniform":
        return sampling.Uniform(p.get("lo", 0.0), p.get("hi", 1.0), seed)
    if kind == "stream":
        return sampling.CorrelatedStream(p["rho"], p["sigma"], seed, p.get("lo", -1.0),
                                         p.get("hi", 1.0))
    w = tuple(p["weights"]) if "weights" in p else None
    return sampling.Discrete(tuple(p["points"]), w, seed)


def build_target(t, process):
    kind = t["kind"]
    noise = t.get("noise_sigma", 0.0)
    if kind == "gamma":
        return sampling.GammaCRF(t.get("gamma", sampling.CRF_GAMMA), noise)
    if kind == "identity":
        return sampling.UserFunction(lambda x: x, noise, "identity")
    if kind == "power":
        power = t.get("power", 1.0)
        return sampling.UserFunction(lambda x: np.abs(x) ** power, noise, f"power{power}")
    channel = sampling.synthetic_channel(t.get("kernel", (0, 0, 1, 0, 0)), t.get("a3", 0.0),
                                         t.get("a5", 0.0), noise, t.get("equalize", False))
    if "snr_db" in t and "noise_sigma" not in t:
        sigma = sampling.noise_sigma_for_snr(process, channel, t["snr_db"])
        channel = sampling.synthetic_channel(channel.kernel, channel.a3, channel.a5, sigma,
                                             channel.equalize)
    return channel


def build_basis(b, process, seed=0):
    kind = b["kind"]
    lo, hi = b.get("lo", 0.0), b.get("hi", 1.0)
    if kind == "monomial":
        inner = bases.Monomial(b["size"], lo, hi)
    elif kind == "lut":
        inner = bases.PiecewiseConstant(b["size"], lo, hi)
    else:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xB451]))
        samples = process.sample(rng, b.get("fit_samples", 100_000))
        inner = bases.build_orthogonal_polys(samples, b["size"] - 1, lo, hi)
    taps = b.get("taps")
    if taps:
        return bases.MemoryTapped(inner, tuple(taps), b.get("gain", True))
    return inner


def build_spec(p, basis):
    blocks = basis.taps if isinstance(basis, bases.MemoryTapped) else 1
    inner = basis.size // blocks
    if p.get("constraint", "none") == "first_difference":
        op = first_difference(inner, p.get("gamma", 0.0))
    else:
        op = no_constraint()
    return PreconditionerSpec(p.get("b", "identity"), op, blocks)


def build_schedule(s, auto=None):
    kind = s["kind"]
    if kind == "constant":
        return Constant(s["mu"])
    if kind == "switch":
        return SwitchAt(s["mu0"], s["switch"])
    lam0, mu_hat0 = s.get("lambda0"), s.get("mu_hat0")
    if lam0 is None or mu_hat0 is None:
        if auto is None:
            raise ConfigError("inverse_decay needs lambda0 and mu_hat0", "schedule.lambda0")
        lam0 = auto.lambda0 if lam0 is None else lam0
        mu_hat0 = auto.mu_hat0 if mu_hat0 is None else mu_hat0
    return InverseDecay(lam0, mu_hat0)


def build(cfg):
    """Assemble process, target, basis, oracle and preconditioner spec."""
    seed = cfg["seed"]
    process = build_process(cfg["process"], seed)
    target = build_target(cfg["target"], process)
    basis = build_basis(cfg["basis"], process, seed)
    spec = build_spec(cfg["preconditioner"], basis)

    oracle, a_ref = None, None
    if cfg["oracle"] == "quadrature":
        oracle = analysis.quadrature_best_approx(process, target, basis)
    elif cfg["oracle"] == "monte_carlo":
        a, b, count, _ = analysis.sample_moments(process, target, basis,
                                                 cfg["oracle_samples"], seed + 1)
        try:
            u_hat = numerics.solve_factored(numerics.factorize_spd(a), b)
            oracle = analysis.OracleSolution(u_hat, a, b, count)
        except numerics.NotPositiveDefinite:
            a_ref = a
    if oracle is not None and spec.b != "identity":
        a_ref = oracle.A
    if spec.b != "identity" and a_ref is None:
        raise ConfigError(f"preconditioner.b = {spec.b!r} needs an oracle Gram matrix",
                          "preconditioner.b")

    auto = None
    if cfg["schedule"]["kind"] == "inverse_decay" and not (
            "lambda0" in cfg["schedule"] and "mu_hat0" in cfg["schedule"]):
        if oracle is None:
            raise ConfigError("automatic inverse_decay constants need an oracle",
                              "schedule.lambda0")
        cov = analysis.estimate_covariances(process, target, basis, cfg["batch_size"],
                                            max(cfg["replicas"], 100), oracle, seed)
        auto = analysis.variance_constants(spec, oracle, cov)
    schedule = build_schedule(cfg["schedule"], auto)

    evaluation = None
    if cfg["eval_samples"] > 0:
        evaluation = EvaluationSet.draw(process, target, basis, cfg["eval_samples"], seed)
    return Scenario(cfg, process, target, basis, spec, schedule, oracle, a_ref, evaluation)
