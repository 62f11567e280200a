"""Forward-in-time population models whose genealogies are spatial
coalescents: the spatial Cannings model and the lookdown particle system.

Both share an event format: at an event time, the levels are partitioned
into groups and every member of a group copies the position of the group's
lowest level.  Genealogy extraction walks the event log backward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernels import torus_displacement, wrap
from .measures import LambdaMeasure, RateTable, XiMeasure
from .partitions import MergerSignature, Partition, signatures_for
from .sampler import CoalescentPath


@dataclass
class OffspringLaw:
    """Exchangeable offspring numbers (O_1, ..., O_N) summing to N.

    Kinds: "trivial" (everyone has one offspring), "pair-resampling" (one
    uniformly chosen individual has two, another has none), "dirac-family"
    (a uniform random permutation of a fixed vector), "custom-sampler"
    (user-supplied callable rng -> vector).
    """

    kind: str
    N: int
    vector: tuple[int, ...] | None = None
    sampler: Callable | None = None

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("population size must be at least 2")
        if self.kind not in ("trivial", "pair-resampling", "dirac-family", "custom-sampler"):
            raise ValueError(f"unknown offspring law {self.kind!r}")
        if self.kind == "dirac-family":
            if self.vector is None or len(self.vector) != self.N:
                raise ValueError("dirac-family requires a length-N vector")
            if any(v < 0 for v in self.vector) or sum(self.vector) != self.N:
                raise ValueError("offspring numbers must be nonnegative and sum to N")
        if self.kind == "custom-sampler" and self.sampler is None:
            raise ValueError("custom-sampler requires a sampler")

    def base_vector(self) -> tuple[int, ...] | None:
        """The fixed multiset of offspring numbers, when the law is a uniform
        permutation of one; None for custom laws."""
        if self.kind == "trivial":
            return (1,) * self.N
        if self.kind == "pair-resampling":
            return (2, 0) + (1,) * (self.N - 2)
        if self.kind == "dirac-family":
            return tuple(self.vector)
        return None

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "custom-sampler":
            o = np.asarray(self.sampler(rng), dtype=int)
            if o.size != self.N or o.sum() != self.N or (o < 0).any():
                raise ValueError("custom sampler returned an invalid offspring vector")
            return o
        return np.asarray(rng.permutation(np.array(self.base_vector())))


@dataclass
class CanningsRate:
    value: float
    std_error: float = 0.0

    @property
    def exact(self) -> bool:
        return self.std_error == 0.0


def _falling(x: int, k: int) -> int:
    out = 1
    for i in range(k):
        out *= x - i
    return out


def _permutation_moment(counts: dict[int, int], gs: list) -> float:
    """E[prod_i g_i(O_i)] when (O_1,...,O_N) is a uniform permutation of a
    multiset given by value -> count, evaluated over the first len(gs) slots.

    Recursion over which distinct value occupies each slot, weighting by the
    remaining count of that value.
    """
    values = sorted(counts)
    total = sum(counts.values())

    def rec(i: int, remaining: tuple[int, ...]) -> float:
        if i == len(gs):
            return 1.0
        left = total - i
        out = 0.0
        for j, v in enumerate(values):
            if remaining[j] == 0:
                continue
            gv = gs[i](v)
            if gv == 0.0:
                continue
            nxt = remaining[:j] + (remaining[j] - 1,) + remaining[j + 1 :]
            out += (remaining[j] / left) * gv * rec(i + 1, nxt)
        return out

    return rec(0, tuple(counts[v] for v in values))


def cannings_p_rates(
    law: OffspringLaw,
    sig: MergerSignature,
    rng: np.random.Generator | None = None,
    mc_draws: int = 10**6,
) -> CanningsRate:
    """Per-generation probability of a specific (n, k)-merger in an n-sample.

    p = ((N)_{n'} / (N)_n) * E[(O_1)_{k_1} ... (O_m)_{k_m} O_{m+1} ... O_{n'}]
    with n' = n - sum(k) + m.  Exact for permutation-of-a-fixed-vector laws,
    Monte Carlo otherwise.
    """
    N = law.N
    if sig.n > N:
        raise ValueError("sample size exceeds the population size")
    nprime = sig.n_after
    pref = _falling(N, nprime) / _falling(N, sig.n)
    gs = [
        (lambda v, k=k: float(_falling(v, k))) for k in sig.ks
    ] + [float] * (nprime - sig.m)
    base = law.base_vector()
    if base is not None:
        counts: dict[int, int] = {}
        for v in base:
            counts[v] = counts.get(v, 0) + 1
        return CanningsRate(pref * _permutation_moment(counts, gs))
    rng = rng if rng is not None else np.random.default_rng()
    vals = np.empty(mc_draws)
    for i in range(mc_draws):
        o = law.sample(rng)
        prod = 1.0
        for j, g in enumerate(gs):
            prod *= g(int(o[j]))
            if prod == 0.0:
                break
        vals[i] = prod
    mean = vals.mean()
    return CanningsRate(pref * mean, pref * vals.std(ddof=1) / math.sqrt(mc_draws))


def cannings_rate_table(law: OffspringLaw, T_N: float, n_max: int) -> RateTable:
    """Coalescent rates T_N * p^N for the genealogy of the Cannings model."""
    rates = {}
    for n in range(2, n_max + 1):
        for sig in signatures_for(n):
            rates[sig] = T_N * cannings_p_rates(law, sig).value
    return RateTable(rates=rates, n_max=n_max)


# -- Forward simulation ------------------------------------------------------


@dataclass
class ForwardRun:
    """A realized forward run over [-horizon, 0].

    ``times`` are event times; ``groups[k]`` lists the level groups of event
    k (only groups of size >= 2); ``positions[k]`` are the level positions
    immediately after event k.  Optional uniform-grid trajectories.
    """

    times: np.ndarray
    groups: list[list[tuple[int, ...]]]
    positions: list[np.ndarray]
    start_time: float
    start_positions: np.ndarray
    end_positions: np.ndarray
    grid_times: np.ndarray | None = None
    grid_positions: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_levels(self) -> int:
        return self.start_positions.shape[0]


def _cannings_groups(
    law: OffspringLaw, rng: np.random.Generator
) -> list[tuple[int, ...]]:
    if law.kind == "trivial":
        return []
    if law.kind == "pair-resampling":
        # one level gets a second offspring slot, replacing another level
        a = int(rng.integers(law.N))
        b = int(rng.integers(law.N - 1))
        if b >= a:
            b += 1
        return [(min(a, b) + 1, max(a, b) + 1)]
    o = law.sample(rng)
    perm = rng.permutation(law.N) + 1
    groups = []
    pos = 0
    for count in o:
        if count >= 2:
            groups.append(tuple(sorted(int(v) for v in perm[pos : pos + count])))
        pos += count
    return groups


def _apply_groups(positions: np.ndarray, groups) -> None:
    for g in groups:
        positions[[i - 1 for i in g[1:]]] = positions[g[0] - 1]


def _run_events(
    n_levels: int,
    d: int,
    total_time: float,
    event_rate: float,
    draw_groups,
    rng: np.random.Generator,
    positions: np.ndarray,
    record_from: float,
    grid_dt: float | None,
):
    """Shared forward core: Poisson events, BM increments, group copying."""
    n_events = rng.poisson(event_rate * total_time)
    times = np.sort(rng.uniform(-total_time, 0.0, size=n_events))
    rec_times: list[float] = []
    rec_groups: list[list[tuple[int, ...]]] = []
    rec_pos: list[np.ndarray] = []
    grid_times = (
        np.arange(record_from, 1e-12, grid_dt) if grid_dt is not None else None
    )
    grid_pos = [] if grid_dt is not None else None
    start_positions = None
    t = -total_time
    gi = 0

    def advance_to(t_new: float) -> float:
        nonlocal start_positions, t, positions
        if start_positions is None and t < record_from <= t_new:
            positions += rng.normal(size=(n_levels, d)) * math.sqrt(record_from - t)
            t = record_from
            np.mod(positions, 1.0, out=positions)
            start_positions = positions.copy()
        if t_new > t:
            positions += rng.normal(size=(n_levels, d)) * math.sqrt(t_new - t)
            t = t_new
            np.mod(positions, 1.0, out=positions)
        return t

    for te in times:
        while grid_times is not None and gi < grid_times.size and grid_times[gi] <= te:
            advance_to(grid_times[gi])
            grid_pos.append(positions.copy())
            gi += 1
        advance_to(te)
        groups = draw_groups(rng)
        _apply_groups(positions, groups)
        if t >= record_from:
            rec_times.append(t)
            rec_groups.append(groups)
            rec_pos.append(positions.copy())
    while grid_times is not None and gi < grid_times.size:
        advance_to(grid_times[gi])
        grid_pos.append(positions.copy())
        gi += 1
    advance_to(0.0)
    return ForwardRun(
        times=np.array(rec_times),
        groups=rec_groups,
        positions=rec_pos,
        start_time=record_from,
        start_positions=start_positions,
        end_positions=positions.copy(),
        grid_times=grid_times,
        grid_positions=np.array(grid_pos) if grid_pos else None,
    )


def default_warmup(pair_rate: float) -> float:
    """Warm-up long enough for the genealogy to mix from i.i.d. uniform."""
    return max(20.0, 10.0 / pair_rate) if pair_rate > 0 else 20.0


def cannings_simulate(
    law: OffspringLaw,
    T_N: float,
    horizon: float,
    d: int,
    rng: np.random.Generator,
    warmup: float | None = None,
    grid_dt: float | None = None,
) -> ForwardRun:
    """Stationary-start spatial Cannings run over [-horizon, 0].

    Reproduction events at rate T_N; at each event the levels are shuffled
    into parent groups by the offspring numbers and every group copies its
    lowest member.  Brownian motion between events.  The warm-up from
    i.i.d. uniform positions is discarded.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if warmup is None:
        pair = T_N * cannings_p_rates(law, MergerSignature(2, (2,))).value
        warmup = default_warmup(pair)
    positions = rng.uniform(size=(law.N, d))
    run = _run_events(
        law.N,
        d,
        warmup + horizon,
        T_N,
        lambda r: _cannings_groups(law, r),
        rng,
        positions,
        -horizon,
        grid_dt,
    )
    run.meta = {"model": "cannings", "T_N": T_N, "law": law.kind, "N": law.N}
    return run


def _lookdown_event_menu(spec: LambdaMeasure | XiMeasure, n: int):
    """(total rate, list of (rate, descriptor)) for the first n levels."""
    if isinstance(spec, LambdaMeasure):
        if spec.density is not None:
            raise ValueError("lookdown requires atomic measures")
        kingman = sum(w for p, w in spec.atoms if p == 0.0)
        atoms = [((p,), w) for p, w in spec.atoms if p > 0.0]
    else:
        kingman = spec.kingman_mass
        atoms = list(spec.atoms)
    menu = []
    if kingman > 0 and n >= 2:
        menu.append((kingman * n * (n - 1) / 2.0, ("pair", None)))
    for xi, w in atoms:
        dot = sum(x * x for x in xi)
        menu.append((w / dot, ("atom", xi)))
    return sum(r for r, _ in menu), menu


def lookdown_simulate(
    spec: LambdaMeasure | XiMeasure,
    n: int,
    horizon: float,
    d: int,
    rng: np.random.Generator,
    warmup: float | None = None,
    grid_dt: float | None = None,
) -> ForwardRun:
    """Lookdown particle system restricted to its first n levels.

    Pairwise lookdowns at the Kingman rate per ordered pair; for each atom,
    events at rate mass/(xi, xi) assign every level independently to basket
    b with probability xi_b (no basket with the remaining probability), and
    each nonempty basket copies its lowest level.
    """
    if n < 1:
        raise ValueError("need at least one level")
    total_rate, menu = _lookdown_event_menu(spec, n)
    rates = np.array([r for r, _ in menu])

    def draw_groups(r: np.random.Generator) -> list[tuple[int, ...]]:
        if not menu:
            return []
        kind, xi = menu[r.choice(len(menu), p=rates / rates.sum())][1]
        if kind == "pair":
            i = int(r.integers(n))
            j = int(r.integers(n - 1))
            if j >= i:
                j += 1
            return [(min(i, j) + 1, max(i, j) + 1)]
        probs = np.array(list(xi) + [max(0.0, 1.0 - sum(xi))])
        assign = r.choice(probs.size, size=n, p=probs / probs.sum())
        groups = []
        for b in range(len(xi)):
            members = tuple(int(v) + 1 for v in np.flatnonzero(assign == b))
            if len(members) >= 2:
                groups.append(members)
        return groups

    if warmup is None:
        pair = kingman_pair_rate(spec)
        warmup = default_warmup(pair if pair > 0 else total_rate)
    positions = rng.uniform(size=(n, d))
    run = _run_events(
        n, d, warmup + horizon, total_rate if menu else 0.0, draw_groups, rng,
        positions, -horizon, grid_dt,
    )
    run.meta = {"model": "lookdown", "n": n}
    return run


def kingman_pair_rate(spec: LambdaMeasure | XiMeasure) -> float:
    """Rate at which a fixed pair of levels coalesces."""
    from .measures import lambda_rate, xi_rate

    if isinstance(spec, LambdaMeasure):
        return lambda_rate(spec, 2, 2)
    return xi_rate(spec, MergerSignature(2, (2,)))


# -- Genealogy extraction ----------------------------------------------------


@dataclass
class ExtractedGenealogy:
    coalescent: CoalescentPath
    fully_coalesced: bool

    @property
    def first_merge_time(self) -> float | None:
        return self.coalescent.events[0][0] if self.coalescent.events else None

    def first_merge_signature(self) -> MergerSignature | None:
        if not self.coalescent.events:
            return None
        from .partitions import merger_signature

        before = self.coalescent.meta["initial_partition"]
        return merger_signature(before, self.coalescent.events[0][1])


def trace_ancestry(
    times: np.ndarray,
    groups: list,
    n: int,
    until_blocks: int = 1,
):
    """Backward walk through an event log starting from levels 1..n at time 0.

    Yields (backward_time, merge map old block -> new ancestor level) events;
    returns the full merge history as a list of
    (backward time, event index, partition after, block -> level map).
    """
    blocks = {frozenset({i}): i for i in range(1, n + 1)}
    history = []
    for idx in range(len(times) - 1, -1, -1):
        if len(blocks) <= until_blocks:
            break
        bt = -float(times[idx])
        for g in groups[idx]:
            gset = set(g)
            tgt = g[0]
            involved = [b for b, lvl in blocks.items() if lvl in gset]
            if not involved:
                continue
            merged = frozenset().union(*involved)
            for b in involved:
                del blocks[b]
            blocks[merged] = tgt
            if len(involved) >= 2:
                part = Partition(list(blocks.keys()))
                history.append((bt, idx, part, dict(blocks)))
    return blocks, history


def extract_genealogy(run: ForwardRun, n: int) -> ExtractedGenealogy:
    """The spatial coalescent of a sample of the lowest n levels at time 0."""
    if n < 1 or n > run.n_levels:
        raise ValueError("invalid sample size")
    blocks, history = trace_ancestry(run.times, run.groups, n)
    initial = Partition.singletons(range(1, n + 1))
    # lineage positions: walk forward records backward, tracking each block's
    # ancestor level through the merge history
    level_of: dict[frozenset, int] = {frozenset({i}): i for i in range(1, n + 1)}
    merge_at: dict[int, list] = {}
    for bt, idx, part, lv in history:
        merge_at.setdefault(idx, []).append((bt, part, lv))
    paths: dict[frozenset, list[tuple[float, np.ndarray]]] = {
        b: [(0.0, run.end_positions[lvl - 1])] for b, lvl in level_of.items()
    }
    events = []
    alive = dict(level_of)
    for idx in range(len(run.times) - 1, -1, -1):
        bt = -float(run.times[idx])
        pos = run.positions[idx]
        if idx in merge_at:
            for bt_m, part, lv in sorted(merge_at[idx]):
                merged_locs = {}
                new_alive = {}
                for b, lvl in lv.items():
                    new_alive[b] = lvl
                    if b not in alive:  # freshly merged block
                        merged_locs[b] = pos[lvl - 1].copy()
                        paths[b] = [(bt_m, pos[lvl - 1].copy())]
                alive = new_alive
                events.append((bt_m, part, merged_locs))
        for b, lvl in alive.items():
            paths[b].append((bt, pos[lvl - 1].copy()))
    cp_paths = {}
    for b, rec in paths.items():
        rec = sorted(rec, key=lambda kv: kv[0])
        cp_paths[b] = (
            np.array([t for t, _ in rec]),
            np.array([p for _, p in rec]),
        )
    cp = CoalescentPath(
        events=sorted(events, key=lambda e: e[0]),
        paths=cp_paths,
        meta={"initial_partition": initial, "model": run.meta.get("model")},
    )
    return ExtractedGenealogy(coalescent=cp, fully_coalesced=len(blocks) == 1)


# -- Long-run harvesting (stationary replicates from one warm run) -----------


class ForwardHarvester:
    """Weakly dependent stationary replicates from a single long forward run.

    One warm-up is paid once; genealogical observations are then harvested
    at times spaced far enough apart that their ancestral traces almost
    never overlap.  A rolling event buffer keeps memory bounded.
    """

    def __init__(
        self,
        n_levels: int,
        d: int,
        event_rate: float,
        draw_groups,
        rng: np.random.Generator,
        warmup: float,
        buffer_span: float = 40.0,
    ):
        self.n_levels = n_levels
        self.d = d
        self.event_rate = event_rate
        self.draw_groups = draw_groups
        self.rng = rng
        self.buffer_span = buffer_span
        self.t = 0.0
        self.positions = rng.uniform(size=(n_levels, d))
        self.ev_times: list[float] = []
        self.ev_groups: list[list[tuple[int, ...]]] = []
        self.ev_positions: list[np.ndarray] = []
        self.advance(warmup)

    def advance(self, span: float) -> None:
        rng = self.rng
        t_end = self.t + span
        t = self.t
        while True:
            t_next = t + rng.exponential(1.0 / self.event_rate)
            if t_next > t_end:
                break
            self.positions += rng.normal(
                size=(self.n_levels, self.d)
            ) * math.sqrt(t_next - t)
            np.mod(self.positions, 1.0, out=self.positions)
            groups = self.draw_groups(rng)
            _apply_groups(self.positions, groups)
            t = t_next
            self.ev_times.append(t)
            self.ev_groups.append(groups)
            self.ev_positions.append(self.positions.copy())
        self.positions += rng.normal(size=(self.n_levels, self.d)) * math.sqrt(
            t_end - t
        )
        np.mod(self.positions, 1.0, out=self.positions)
        self.t = t_end
        cut = 0
        while self.ev_times and self.ev_times[cut] < t_end - self.buffer_span:
            cut += 1
        if cut:
            del self.ev_times[:cut]
            del self.ev_groups[:cut]
            del self.ev_positions[:cut]

    def observe(self, n: int):
        """(sample positions now, first-merge backward time, partition after
        the first merge, merge level positions) for the lowest n levels.

        Returns None for the merge fields if the trace leaves the buffer.
        """
        sample_pos = self.positions[:n].copy()
        blocks = {frozenset({i}): i for i in range(1, n + 1)}
        for idx in range(len(self.ev_times) - 1, -1, -1):
            groups = self.ev_groups[idx]
            changed = False
            merged_any = []
            for g in groups:
                gset = set(g)
                involved = [b for b, lvl in blocks.items() if lvl in gset]
                if not involved:
                    continue
                merged = frozenset().union(*involved)
                for b in involved:
                    del blocks[b]
                blocks[merged] = g[0]
                if len(involved) >= 2:
                    merged_any.append(merged)
                changed = True
            if merged_any:
                bt = self.t - self.ev_times[idx]
                part = Partition(list(blocks.keys()))
                locs = {
                    b: self.ev_positions[idx][blocks[b] - 1].copy()
                    for b in merged_any
                }
                return sample_pos, bt, part, locs
            if changed:
                continue
        return sample_pos, None, None, None
