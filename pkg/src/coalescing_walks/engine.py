"""Event-driven simulation of coalescing random walks on the torus.

The chain is simulated Gillespie-style: a single exponential clock of rate
``|A|`` fires, a uniformly chosen particle attempts a nearest-neighbour jump,
and if the target is occupied the mover is absorbed. Time is natural
(unrescaled); rescaling by ``theta_N`` happens in the callers.

The state lives in two arrays: ``positions[:count]`` holds the occupied
sites, ``slot[site]`` holds the position of ``site`` in that list or -1.
Removal is a swap with the last live slot, so every operation is O(1).
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from numba import njit

from .errors import EventCapExceeded
from .lattice import TorusGeometry

DEFAULT_MAX_EVENTS = 10**10


# --------------------------------------------------------------------------
# compiled kernels


@njit(cache=True, nogil=True, inline="always")
def _shift(site, direction, N, strides):
    j = direction >> 1
    stride = strides[j]
    c = (site // stride) % N
    if direction & 1:
        nc = c - 1 if c > 0 else N - 1
    else:
        nc = c + 1 if c < N - 1 else 0
    return site + (nc - c) * stride


@njit(cache=True, nogil=True, inline="always")
def _uniform_index(rng, k):
    # int(U * k) is ~10x cheaper than Generator.integers under numba
    i = int(rng.random() * k)
    return i if i < k else k - 1


@njit(cache=True, nogil=True)
def _occupied_neighbours(site, slot, N, d, strides):
    k = 0
    for direction in range(2 * d):
        if slot[_shift(site, direction, N, strides)] >= 0:
            k += 1
    return k


@njit(cache=True, nogil=True)
def _adjacency_weight(positions, count, slot, N, d, strides):
    # sum over ordered pairs (x, y) of the number of directions taking x to y
    total = 0
    for i in range(count):
        total += _occupied_neighbours(positions[i], slot, N, d, strides)
    return total


@njit(cache=True, nogil=True)
def _step(positions, slot, count, N, d, strides, rng):
    """One event. Returns (holding_time, coalesced, mover_from, mover_to)."""
    dt = rng.standard_exponential() / count
    i = _uniform_index(rng, count)
    direction = _uniform_index(rng, 2 * d)
    src = positions[i]
    dst = _shift(src, direction, N, strides)
    if slot[dst] >= 0:
        last = count - 1
        moved = positions[last]
        positions[i] = moved
        slot[moved] = i
        slot[src] = -1
        positions[last] = -1
        return dt, True, src, dst
    positions[i] = dst
    slot[src] = -1
    slot[dst] = i
    return dt, False, src, dst


@njit(cache=True, nogil=True)
def _run(positions, slot, count, N, d, strides, rng, stop_count, stop_time, max_events,
         tau, track, u_lo, u_hi, fvals, lam_over_theta):
    """Advance until ``count <= stop_count`` or time reaches ``stop_time``.

    When ``track`` is set, also accumulates the integral over natural time in
    ``[u_lo, u_hi]`` of ``(R(A) - lam(|A|)/theta) * fvals[|A|]`` and records
    ``|A(u_lo)|``. Returns ``(time, count, events, integral, count_at_lo, status)``
    with ``status`` 1 when the event cap was hit.
    """
    time = 0.0
    events = 0
    integral = 0.0
    count_at_lo = count
    seen_lo = u_lo <= 0.0
    two_d = 2 * d
    adj = 0
    if track:
        adj = _adjacency_weight(positions, count, slot, N, d, strides)
    nf = fvals.shape[0]
    while count > stop_count:
        if events >= max_events:
            return time, count, events, integral, count_at_lo, 1
        dt = rng.standard_exponential() / count
        t_next = time + dt
        hit_stop = t_next >= stop_time
        if hit_stop:
            t_next = stop_time
        if track:
            if not seen_lo and t_next >= u_lo:
                count_at_lo = count
                seen_lo = True
            lo = time if time > u_lo else u_lo
            hi = t_next if t_next < u_hi else u_hi
            if hi > lo and count < nf:
                fv = fvals[count]
                if fv != 0.0:
                    r = adj / two_d
                    lam_n = 0.5 * count * (count - 1)
                    integral += (r - lam_n * lam_over_theta) * fv * (hi - lo)
        if hit_stop:
            time = stop_time
            break
        time = t_next
        i = _uniform_index(rng, count)
        direction = _uniform_index(rng, two_d)
        src = positions[i]
        dst = _shift(src, direction, N, strides)
        events += 1
        if track:
            adj -= 2 * _occupied_neighbours(src, slot, N, d, strides)
        if slot[dst] >= 0:
            last = count - 1
            moved = positions[last]
            positions[i] = moved
            slot[moved] = i
            slot[src] = -1
            positions[last] = -1
            count -= 1
            tau[count] = time
        else:
            positions[i] = dst
            slot[src] = -1
            slot[dst] = i
            if track:
                adj += 2 * _occupied_neighbours(dst, slot, N, d, strides)
    if track and not seen_lo:
        count_at_lo = count
    return time, count, events, integral, count_at_lo, 0


# --------------------------------------------------------------------------
# state


@dataclass
class ParticleConfig:
    """A nonempty set of occupied torus sites."""

    geometry: TorusGeometry
    positions: np.ndarray
    slot: np.ndarray
    count: int

    @classmethod
    def from_sites(cls, g: TorusGeometry, sites: Iterable[int | Sequence[int]]) -> "ParticleConfig":
        """Build from site indices or coordinate tuples; duplicates are merged."""
        idx = []
        for s in sites:
            i = g.index(s) if isinstance(s, (tuple, list, np.ndarray)) else int(s)
            if not 0 <= i < g.n_sites:
                raise ValueError(f"site {s} outside the torus")
            idx.append(i)
        uniq = list(dict.fromkeys(idx))
        if not uniq:
            raise ValueError("a configuration needs at least one particle")
        positions = np.full(len(uniq), -1, dtype=np.int64)
        positions[:] = uniq
        slot = np.full(g.n_sites, -1, dtype=np.int64)
        slot[positions] = np.arange(len(uniq))
        return cls(g, positions, slot, len(uniq))

    @classmethod
    def full(cls, g: TorusGeometry) -> "ParticleConfig":
        return cls.from_sites(g, range(g.n_sites))

    def __len__(self) -> int:
        return self.count

    def sites(self) -> frozenset[int]:
        return frozenset(int(s) for s in self.positions[: self.count])

    def coords(self) -> list[tuple[int, ...]]:
        return [self.geometry.coords(int(s)) for s in sorted(self.sites())]

    def copy(self) -> "ParticleConfig":
        return ParticleConfig(self.geometry, self.positions.copy(), self.slot.copy(), self.count)

    def translated(self, shift: Sequence[int]) -> "ParticleConfig":
        g = self.geometry
        return ParticleConfig.from_sites(
            g, [tuple(c + s for c, s in zip(pt, shift)) for pt in self.coords()]
        )

    def check(self) -> None:
        """Assert the slot table and the particle list agree."""
        live = self.positions[: self.count]
        assert np.all(live >= 0)
        assert len(set(live.tolist())) == self.count
        assert np.all(self.slot[live] == np.arange(self.count))
        assert int((self.slot >= 0).sum()) == self.count


@dataclass(frozen=True)
class StopRule:
    """When to stop a replica: at a particle count, at a time, or at one particle."""

    kind: str
    value: float = 1.0

    @classmethod
    def reach_count(cls, j: int) -> "StopRule":
        if j < 1:
            raise ValueError("target count must be >= 1")
        return cls("reach_count", int(j))

    @classmethod
    def reach_time(cls, T: float) -> "StopRule":
        if not T > 0 or not math.isfinite(T):
            raise ValueError("stop time must be positive and finite")
        return cls("reach_time", float(T))

    @classmethod
    def full_coalescence(cls) -> "StopRule":
        return cls("full_coalescence", 1)

    def bounds(self, n0: int) -> tuple[int, float]:
        if self.kind == "reach_count":
            if not 1 <= self.value <= n0:
                raise ValueError(f"target count {self.value} outside [1, {n0}]")
            return int(self.value), math.inf
        if self.kind == "reach_time":
            return 1, float(self.value)
        if self.kind == "full_coalescence":
            return 1, math.inf
        raise ValueError(f"unknown stop rule {self.kind!r}")


@dataclass
class TrajectoryRecord:
    """Coalescence times of one replica: ``tau[j]`` is the first time ``|A| = j``."""

    tau: dict[int, float]
    final_time: float
    jump_count: int
    seed: int | None
    N: int
    d: int
    n0: int
    final_count: int = field(default=0)

    @property
    def coalescence_time(self) -> float | None:
        return self.tau.get(1)

    def count_at(self, t: float | np.ndarray) -> np.ndarray:
        """``|A(t)|`` reconstructed from the coalescence times (valid for t <= final_time)."""
        js = np.array(sorted(self.tau), dtype=np.int64)
        times = np.array([self.tau[j] for j in js])
        # |A(t)| = min{j : tau_j <= t}; tau decreases in j
        order = np.argsort(times, kind="stable")
        times, js = times[order], js[order]
        k = np.searchsorted(times, np.asarray(t, dtype=float), side="right")
        return js[k - 1] if np.ndim(k) == 0 else js[np.asarray(k) - 1]

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "N": self.N,
                "d": self.d,
                "n0": self.n0,
                "tau": {str(j): self.tau[j] for j in sorted(self.tau, reverse=True)},
                "final_time": self.final_time,
                "final_count": self.final_count,
                "jump_count": self.jump_count,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "TrajectoryRecord":
        raw = json.loads(line)
        return cls(
            tau={int(j): float(t) for j, t in raw["tau"].items()},
            final_time=raw["final_time"],
            jump_count=raw["jump_count"],
            seed=raw["seed"],
            N=raw["N"],
            d=raw["d"],
            n0=raw["n0"],
            final_count=raw.get("final_count", 0),
        )


# --------------------------------------------------------------------------
# seeding


def replica_seed(master_seed: int, replica: int) -> int:
    """Seed of replica ``replica`` under ``master_seed``.

    Derived with ``SeedSequence(master_seed, spawn_key=(replica,))`` so adding
    replicas never changes the streams of existing ones.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(replica),))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def make_rng(seed: int | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(int(seed))


# --------------------------------------------------------------------------
# operations


def step(config: ParticleConfig, rng: np.random.Generator) -> tuple[ParticleConfig, float, bool]:
    """Apply one event to ``config`` in place and return it with the holding time."""
    g = config.geometry
    dt, coalesced, _, _ = _step(config.positions, config.slot, config.count, g.N, g.d, g.strides, rng)
    if coalesced:
        config.count -= 1
    return config, float(dt), bool(coalesced)


def rate_R(config: ParticleConfig) -> float:
    """Total rate of jumps of an occupied site onto another occupied site."""
    g = config.geometry
    w = _adjacency_weight(config.positions, config.count, config.slot, g.N, g.d, g.strides)
    return w / (2 * g.d)


def is_scattered(config: ParticleConfig, a: float) -> bool:
    """True when every pair of particles is at wrapped distance ``>= a``."""
    g = config.geometry
    if config.count < 2:
        return True
    pts = np.array(config.coords())
    for i in range(len(pts) - 1):
        diff = np.abs(pts[i + 1 :] - pts[i])
        diff = np.minimum(diff, g.N - diff)
        if np.sqrt((diff * diff).sum(axis=1)).min() < a:
            return False
    return True


def _run_config(config, stop_count, stop_time, rng, max_events, window=None):
    g = config.geometry
    n0 = config.count
    tau = np.full(n0 + 1, np.nan)
    tau[n0] = 0.0
    if window is None:
        track, u_lo, u_hi, fvals, lot = False, 0.0, 0.0, np.zeros(1), 0.0
    else:
        track = True
        u_lo, u_hi, fvals, lot = window
    out = _run(config.positions, config.slot, config.count, g.N, g.d, g.strides, rng,
               stop_count, stop_time, max_events, tau, track, u_lo, u_hi, fvals, lot)
    time, count, events, integral, count_at_lo, status = out
    config.count = int(count)
    if status == 1:
        raise EventCapExceeded(
            f"event cap {max_events} reached at time {time:.6g} with {count} particles left"
        )
    return tau, float(time), int(events), float(integral), int(count_at_lo)


def simulate(
    initial: ParticleConfig,
    stop: StopRule,
    rng: int | np.random.Generator,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> TrajectoryRecord:
    """Run one replica from ``initial`` (left untouched) until ``stop`` fires.

    ``rng`` is either a seed, which is recorded, or a ``Generator``.
    """
    seed = None if isinstance(rng, np.random.Generator) else int(rng)
    gen = make_rng(rng)
    config = initial.copy()
    n0 = config.count
    stop_count, stop_time = stop.bounds(n0)
    tau, time, events, _, _ = _run_config(config, stop_count, stop_time, gen, max_events)
    reached = {j: float(tau[j]) for j in range(1, n0 + 1) if not math.isnan(tau[j])}
    g = initial.geometry
    return TrajectoryRecord(reached, time, events, seed, g.N, g.d, n0, config.count)


def _prepare_F(F, k0):
    if isinstance(F, Mapping):
        keys = [int(k) for k in F]
        cutoff = max(keys, default=0) + 1
        fvals = np.zeros(max(cutoff, 2))
        for k, v in F.items():
            fvals[int(k)] = float(v)
        return fvals
    if not callable(F):
        raise TypeError("F must be a mapping or a callable")
    if k0 is None:
        raise ValueError("a callable F needs a declared cutoff k0 with F(k) = 0 for k >= k0")
    fvals = np.zeros(max(int(k0), 2))
    for k in range(1, int(k0)):
        fvals[k] = float(F(k))
    return fvals


def replacement_statistic(
    initial: ParticleConfig,
    t0: float,
    t: float,
    F: Mapping[int, float] | Callable[[int], float],
    theta: float,
    rng: int | np.random.Generator,
    k0: int | None = None,
    conditioning: Callable[[int], float] | None = None,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> float:
    """One replica of ``B * int_{t0}^{t} (theta R(A(s theta)) - lam(|A(s theta)|)) F(|A(s theta)|) ds``.

    ``F`` is a mapping from counts to values (zero outside its keys) or a
    callable together with ``k0`` such that ``F(k) = 0`` for ``k >= k0``.
    ``conditioning`` maps ``|A(t0 theta)|`` to the bounded weight ``B``
    (default 1). The integral is summed exactly over the event intervals.
    """
    if not 0 < t0 < t:
        raise ValueError("need 0 < t0 < t")
    if not theta > 0:
        raise ValueError("theta must be positive")
    fvals = _prepare_F(F, k0)
    config = initial.copy()
    window = (t0 * theta, t * theta, fvals, 1.0 / theta)
    _, _, _, integral, count_at_lo = _run_config(
        config, 1, t * theta, make_rng(rng), max_events, window
    )
    weight = 1.0 if conditioning is None else float(conditioning(count_at_lo))
    return weight * integral


# --------------------------------------------------------------------------
# replica orchestration


def _map_replicas(fn, replicas: int, workers: int):
    if workers <= 1:
        return [fn(i) for i in range(replicas)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(replicas)))


def run_replicas(
    initial: ParticleConfig | Callable[[np.random.Generator], ParticleConfig],
    stop: StopRule,
    master_seed: int,
    replicas: int,
    workers: int = 1,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> list[TrajectoryRecord]:
    """Independent replicas ordered by index.

    ``initial`` may be a factory taking the replica's generator, for random
    initial conditions; it is called before the dynamics consume the stream.
    """
    if replicas < 1:
        raise ValueError("need at least one replica")

    def one(i: int) -> TrajectoryRecord:
        seed = replica_seed(master_seed, i)
        gen = np.random.default_rng(seed)
        start = initial(gen) if callable(initial) else initial
        rec = simulate(start, stop, gen, max_events)
        rec.seed = seed
        return rec

    return _map_replicas(one, replicas, workers)


def replacement_ensemble(
    initial: ParticleConfig,
    t0: float,
    t: float,
    F,
    theta: float,
    master_seed: int,
    replicas: int,
    k0: int | None = None,
    conditioning: Callable[[int], float] | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Per-replica values of :func:`replacement_statistic`."""

    def one(i: int) -> float:
        return replacement_statistic(initial, t0, t, F, theta, replica_seed(master_seed, i),
                                     k0=k0, conditioning=conditioning)

    return np.array(_map_replicas(one, replicas, workers))


def random_scattered(
    g: TorusGeometry, n: int, a: float, rng: np.random.Generator, max_tries: int = 100_000
) -> ParticleConfig:
    """Uniform draw from the ``n``-point configurations with pairwise distance ``>= a``.

    Plain rejection on ``n`` distinct uniform sites, so the result is exactly
    uniform on the scattered configurations.
    """
    for _ in range(max_tries):
        sites = rng.choice(g.n_sites, size=n, replace=False)
        config = ParticleConfig.from_sites(g, sites.tolist())
        if is_scattered(config, a):
            return config
    raise ValueError(f"could not place {n} points at mutual distance {a} on {g}")
