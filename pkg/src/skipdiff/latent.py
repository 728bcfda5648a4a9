"""Latent vectors, finite-difference stencils, norms and recorded trajectories."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

# Below this both norms are treated as exactly zero.
DEGENERATE_TOL = 1e-15


class NonFiniteLatentError(ValueError):
    pass


class NormKind(str, Enum):
    L1 = "L1"
    L2 = "L2"


@dataclass(frozen=True)
class LatentState:
    values: np.ndarray
    step_index: int
    side: Optional[int] = None  # square-grid side length, metadata only

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError(f"latent must be a flat vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFiniteLatentError(f"non-finite latent at step {self.step_index}")
        if self.side is not None and self.side * self.side != v.size:
            raise ValueError(f"side {self.side} does not match dimension {v.size}")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.size


def _vec(a) -> np.ndarray:
    if isinstance(a, LatentState):
        return a.values
    return np.asarray(a, dtype=np.float64)


def first_diff(a, b) -> np.ndarray:
    """Elementwise ``a - b`` (``a`` is the later latent, i.e. ``x_i - x_{i+1}``)."""
    va, vb = _vec(a), _vec(b)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    return va - vb


class DiffWindow:
    """The four most recent latents, oldest first: x_{i+2}, x_{i+1}, x_i, x_{i-1}."""

    size = 4

    def __init__(self, latents: Iterable = ()):
        self._latents: list[np.ndarray] = []
        for x in latents:
            self.push(x)

    def push(self, x) -> None:
        v = _vec(x)
        if self._latents and v.shape != self._latents[-1].shape:
            raise ValueError(f"dimension mismatch: {v.shape} vs {self._latents[-1].shape}")
        self._latents.append(v)
        if len(self._latents) > self.size:
            self._latents.pop(0)

    @property
    def full(self) -> bool:
        return len(self._latents) == self.size

    def __len__(self) -> int:
        return len(self._latents)

    @property
    def latents(self) -> list[np.ndarray]:
        return list(self._latents)

    def diffs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(Δx_{i+1}, Δx_i, Δx_{i-1})."""
        if not self.full:
            raise ValueError(f"window holds {len(self)} latents, need {self.size}")
        x2, x1, x0, xm = self._latents
        return first_diff(x1, x2), first_diff(x0, x1), first_diff(xm, x0)

    def latest_diff(self) -> np.ndarray:
        """Δx_i, the middle difference the criterion normalises by."""
        return self.diffs()[1]


def third_diff(window: DiffWindow) -> np.ndarray:
    d_older, d_mid, d_new = window.diffs()
    return d_new - 2.0 * d_mid + d_older


def latent_norm(v, kind: NormKind | str = NormKind.L2) -> float:
    """Dimension-normalised norm: mean |v| for L1, root-mean-square for L2."""
    v = _vec(v)
    if v.size == 0:
        raise ValueError("norm of an empty vector")
    kind = NormKind(kind)
    if kind is NormKind.L1:
        return float(np.mean(np.abs(v)))
    return float(np.sqrt(np.mean(v * v)))


@dataclass
class Trajectory:
    """A reverse run from x_T to x_0.

    Row ``j`` of ``noises``/``evaluated``/``injected`` belongs to the update
    that maps ``latents[j]`` (step index T - j) to ``latents[j + 1]``.
    """

    latents: np.ndarray  # (T + 1, D)
    noises: np.ndarray  # (T, D)
    evaluated: np.ndarray  # (T,) bool
    injected: Optional[np.ndarray] = None  # (T, D)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float64)
        self.noises = np.asarray(self.noises, dtype=np.float64)
        self.evaluated = np.asarray(self.evaluated, dtype=bool)
        T = self.num_steps
        if self.latents.shape[0] != T + 1 or self.evaluated.shape != (T,):
            raise ValueError("trajectory needs T + 1 latents and T noises/flags")
        if self.injected is None:
            self.injected = np.zeros_like(self.noises)
        else:
            self.injected = np.asarray(self.injected, dtype=np.float64)

    @property
    def num_steps(self) -> int:
        return self.noises.shape[0]

    @property
    def final(self) -> np.ndarray:
        return self.latents[-1]

    def latent_at(self, step_index: int) -> LatentState:
        T = self.num_steps
        if not 0 <= step_index <= T:
            raise IndexError(f"step index {step_index} outside [0, {T}]")
        return LatentState(self.latents[T - step_index], step_index)

    def noise_for_step(self, i: int) -> np.ndarray:
        """Noise used by the update x_i -> x_{i-1}."""
        T = self.num_steps
        if not 1 <= i <= T:
            raise IndexError(f"no update at step index {i}")
        return self.noises[T - i]

    def check_cache_invariant(self) -> None:
        """Every skipped row must repeat the last evaluated prediction bit for bit."""
        last = None
        for j in range(self.num_steps):
            if self.evaluated[j]:
                last = self.noises[j]
            elif last is None:
                raise AssertionError(f"row {j} skipped with no earlier prediction")
            elif not np.array_equal(self.noises[j], last):
                raise AssertionError(f"row {j} does not reuse the cached prediction")

    def to_jsonl(self, path) -> None:
        T = self.num_steps
        with open(path, "w") as fh:
            for j in range(T + 1):
                rec = {"step_index": T - j, "latent": self.latents[j].tolist()}
                if j < T:
                    rec["noise"] = self.noises[j].tolist()
                    rec["evaluated"] = bool(self.evaluated[j])
                    if np.any(self.injected[j]):
                        rec["injected"] = self.injected[j].tolist()
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "Trajectory":
        recs = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        recs.sort(key=lambda r: -r["step_index"])
        latents = [r["latent"] for r in recs]
        steps = recs[:-1]
        dim = len(latents[0])
        injected = [r.get("injected", [0.0] * dim) for r in steps]
        return cls(
            latents=np.array(latents, dtype=np.float64).reshape(len(latents), dim),
            noises=np.array([r["noise"] for r in steps], dtype=np.float64).reshape(len(steps), dim),
            evaluated=np.array([r["evaluated"] for r in steps], dtype=bool),
            injected=np.array(injected, dtype=np.float64).reshape(len(steps), dim),
        )


def path_to_string(path) -> str:
    return "".join("E" if e else "S" for e in path)


def path_from_string(s: str) -> np.ndarray:
    bad = set(s) - {"E", "S"}
    if bad:
        raise ValueError(f"skip path string may only contain E/S, got {sorted(bad)}")
    return np.array([c == "E" for c in s], dtype=bool)
