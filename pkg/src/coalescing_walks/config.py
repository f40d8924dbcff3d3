"""Run configuration and acceptance thresholds.

Thresholds are loaded once per process; set ``COALESCING_WALKS_THRESHOLDS``
to a JSON file to override any field.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, fields, replace

ENV_VAR = "COALESCING_WALKS_THRESHOLDS"
DEFAULT_SEED = 20240531


@dataclass(frozen=True)
class Thresholds:
    alpha: float = 0.01
    n_se: float = 3.0
    min_ks_samples: int = 100
    moment_spread: float = 2.0
    decay_spread: float = 2.0
    occupation_tol: float = 1e-9
    adjacency_max_gap: float = 0.25
    adjacency_trend_tol: float = 1e-9
    theta_gap_d3: float = 0.15
    escape_stability: float = 0.01
    pair_law_gap: float = 0.10

    def to_dict(self) -> dict:
        return asdict(self)


def load_thresholds(path: str | None = None) -> Thresholds:
    path = path or os.environ.get(ENV_VAR)
    base = Thresholds()
    if not path:
        return base
    with open(path) as fh:
        raw = json.load(fh)
    known = {f.name for f in fields(Thresholds)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown threshold keys: {sorted(unknown)}")
    return replace(base, **raw)


THRESHOLDS = load_thresholds()


INITIAL_KINDS = ("full", "scattered", "pair", "explicit")
STOP_KINDS = ("full_coalescence", "reach_count", "reach_time")


@dataclass
class RunConfig:
    """Flat run description shared by the command-line front end and manifests.

    ``replicas = None`` means the command's own default.
    """

    d: int = 3
    N: int = 16
    initial: str = "full"
    n: int = 2
    a: float | None = None
    delta: list[int] | None = None
    sites: list[list[int]] | None = None
    replicas: int | None = None
    seed: int = DEFAULT_SEED
    stop: str = "full_coalescence"
    stop_value: float | None = None
    method: str = "exact_solve"
    workers: int = 1
    max_events: int = 10**10

    def validate(self) -> None:
        if self.d < 2:
            raise ValueError("d must be >= 2")
        if self.N < 4:
            raise ValueError("N must be >= 4")
        if self.replicas is not None and self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.initial not in INITIAL_KINDS:
            raise ValueError(f"initial must be one of {INITIAL_KINDS}")
        if self.stop not in STOP_KINDS:
            raise ValueError(f"stop must be one of {STOP_KINDS}")
        if self.stop != "full_coalescence" and self.stop_value is None:
            raise ValueError(f"stop rule {self.stop} needs stop_value")
        if self.initial == "scattered":
            if self.n < 1:
                raise ValueError("scattered start needs n >= 1")
            if self.a is not None and not packing_feasible(self.d, self.N, self.n, self.a):
                raise ValueError(f"{self.n} points at mutual distance {self.a} do not fit in the torus")
        if self.initial == "pair" and self.delta is not None and len(self.delta) != self.d:
            raise ValueError("delta must have d coordinates")
        if self.initial == "explicit" and not self.sites:
            raise ValueError("explicit start needs a nonempty site list")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


def packing_feasible(d: int, N: int, n: int, a: float) -> bool:
    """Volume test: ``n`` disjoint balls of radius ``a/2`` must fit in ``N^d``,
    and ``a`` cannot exceed the largest wrapped distance. Vacuous for ``n < 2``."""
    if n < 2:
        return True
    ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * (a / 2) ** d
    return n * ball <= N**d and a <= math.sqrt(d) * N / 2
