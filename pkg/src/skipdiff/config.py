"""Run configuration: TOML file, CLI overrides, hashing and seed derivation."""

from __future__ import annotations

import copy
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .controller import ControllerConfig
from .denoisers import GmmModel
from .latent import NormKind
from .schedulers import SchedulerPlan, build_ddim_plan, build_euler_ve_plan, build_sde_euler_plan

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUT_ENV = "SKIPDIFF_OUT"
SAMPLERS = ("ddim", "euler-ve", "sde-euler")

DEFAULT_SAMPLER = {
    "ddim": {"beta_start": 1e-4, "beta_end": 0.02, "train_steps": 1000},
    "euler-ve": {"sigma_max": 80.0, "sigma_min": 0.002, "grid": "karras"},
    "sde-euler": {"sigma_max": 80.0, "sigma_min": 0.002, "grid": "karras"},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    sampler: str = "euler-ve"
    sampler_params: dict = field(default_factory=dict)
    model: GmmModel = field(default_factory=lambda: GmmModel.random(0))
    T: int = 50
    delta: float = 0.01
    c_max: Optional[int] = 4
    warmup: int = 3
    norm_kind: NormKind = NormKind.L2
    seed: int = 0
    churn: float = 1.0
    sde_delta: float = 0.01
    out: str = "runs"

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"unknown sampler {self.sampler!r}; choose from {', '.join(SAMPLERS)}")
        params = dict(DEFAULT_SAMPLER[self.sampler])
        unknown = set(self.sampler_params) - set(params)
        if unknown:
            raise ConfigError(f"unknown {self.sampler} parameters: {sorted(unknown)}")
        params.update(self.sampler_params)
        self.sampler_params = params
        if self.T < 4:
            raise ConfigError("T must be at least 4")
        self.norm_kind = NormKind(self.norm_kind)
        try:
            self.controller()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def dim(self) -> int:
        return self.model.dim

    def controller(self, **overrides) -> ControllerConfig:
        kw = dict(delta=self.delta, c_max=self.c_max, warmup=self.warmup,
                  norm_kind=self.norm_kind, sde_delta=self.sde_delta)
        kw.update(overrides)
        return ControllerConfig(**kw)

    def plan(self, T: Optional[int] = None) -> SchedulerPlan:
        T = self.T if T is None else T
        p = self.sampler_params
        if self.sampler == "ddim":
            return build_ddim_plan(T, p["beta_start"], p["beta_end"], int(p["train_steps"]))
        if self.sampler == "euler-ve":
            return build_euler_ve_plan(T, p["sigma_max"], p["sigma_min"], p["grid"])
        return build_sde_euler_plan(T, p["sigma_max"], p["sigma_min"], self.churn, p["grid"])

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "T": self.T, "out": self.out,
            "sampler": {"name": self.sampler, **self.sampler_params},
            "controller": {"delta": self.delta, "c_max": self.c_max, "warmup": self.warmup,
                           "norm": self.norm_kind.value},
            "sde": {"churn": self.churn, "sde_delta": self.sde_delta},
            "model": self.model.to_dict(),
        }

    def digest(self) -> str:
        """Hash of everything that affects results (the output directory excluded)."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **kw) -> "RunConfig":
        new = copy.copy(self)
        for k, v in kw.items():
            setattr(new, k, v)
        new.__post_init__()
        return new


def from_dict(d: dict) -> RunConfig:
    d = copy.deepcopy(d)
    sampler = dict(d.pop("sampler", {}))
    ctrl = d.pop("controller", {})
    sde = d.pop("sde", {})
    model = d.pop("model", None)
    kw: dict[str, Any] = {}
    for key in ("seed", "T", "out"):
        if key in d:
            kw[key] = d.pop(key)
    if d:
        raise ConfigError(f"unknown top-level keys: {sorted(d)}")
    if sampler:
        kw["sampler"] = sampler.pop("name", "euler-ve")
        kw["sampler_params"] = sampler
    mapping = {"delta": "delta", "c_max": "c_max", "warmup": "warmup", "norm": "norm_kind"}
    for src, dst in mapping.items():
        if src in ctrl:
            kw[dst] = ctrl.pop(src)
    if ctrl:
        raise ConfigError(f"unknown controller keys: {sorted(ctrl)}")
    if kw.get("c_max") == 0:
        kw["c_max"] = None  # 0 in a file means "no cap"
    for key in ("churn", "sde_delta"):
        if key in sde:
            kw[key] = sde.pop(key)
    if sde:
        raise ConfigError(f"unknown sde keys: {sorted(sde)}")
    if model is not None:
        try:
            kw["model"] = GmmModel.from_dict(model)
        except ValueError as exc:
            raise ConfigError(f"invalid model block: {exc}") from None
    try:
        return RunConfig(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, **overrides) -> RunConfig:
    """Defaults < file < environment (output dir only) < explicit overrides."""
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    cfg = from_dict(data)
    env_out = os.environ.get(OUT_ENV)
    if env_out:
        cfg.out = env_out
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        cfg = cfg.replace(**overrides)
    return cfg


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def dump_config(cfg: RunConfig, path) -> None:
    d = cfg.to_dict()
    if d["controller"]["c_max"] is None:
        d["controller"]["c_max"] = 0
    lines = [f"{k} = {_toml_value(d[k])}" for k in ("seed", "T", "out")]
    for section in ("sampler", "controller", "sde", "model"):
        lines.append("")
        lines.append(f"[{section}]")
        for k, v in d[section].items():
            lines.append(f"{k} = {_toml_value(v)}")
    Path(path).write_text("\n".join(lines) + "\n")


def derive_seed(master: int, index: int) -> int:
    """Stable per-run seed from (master, run index); independent of execution order."""
    h = hashlib.sha256(f"{int(master)}:{int(index)}".encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1
