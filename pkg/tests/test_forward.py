"""Cannings per-generation merger probabilities, forward runs, and
genealogy extraction."""

import math

import numpy as np
import pytest
from scipy import stats

from spatialcoal.forward import (
    ForwardHarvester,
    _cannings_groups,
    OffspringLaw,
    cannings_p_rates,
    cannings_rate_table,
    cannings_simulate,
    default_warmup,
    extract_genealogy,
    kingman_pair_rate,
    lookdown_simulate,
    trace_ancestry,
)
from spatialcoal.measures import LambdaMeasure, XiMeasure, check_consistency
from spatialcoal.partitions import MergerSignature, Partition


def test_offspring_law_validation():
    with pytest.raises(ValueError):
        OffspringLaw("trivial", 1)
    with pytest.raises(ValueError):
        OffspringLaw("bogus", 5)
    with pytest.raises(ValueError):
        OffspringLaw("dirac-family", 4, vector=(2, 2, 1, 0))  # sums to 5
    with pytest.raises(ValueError):
        OffspringLaw("custom-sampler", 4)
    law = OffspringLaw("pair-resampling", 5)
    assert sorted(law.base_vector()) == [0, 1, 1, 1, 2]


def test_pair_resampling_pair_probability():
    # a given pair of sampled children share a parent iff both descend from
    # the doubled individual: 2 ordered slots of N*(N-1)
    for N in (4, 10, 30):
        law = OffspringLaw("pair-resampling", N)
        p = cannings_p_rates(law, MergerSignature(2, (2,)))
        assert p.exact
        assert p.value == pytest.approx(2.0 / (N * (N - 1)), rel=1e-12)
        # no triple mergers under pair resampling
        assert cannings_p_rates(law, MergerSignature(3, (3,))).value == 0.0


def test_trivial_law_never_merges():
    law = OffspringLaw("trivial", 6)
    assert cannings_p_rates(law, MergerSignature(2, (2,))).value == 0.0


def test_dirac_family_exact_vs_monte_carlo():
    N = 6
    vec = (3, 2, 1, 0, 0, 0)
    exact_law = OffspringLaw("dirac-family", N, vector=vec)
    mc_law = OffspringLaw(
        "custom-sampler",
        N,
        sampler=lambda rng: rng.permutation(np.array(vec)),
    )
    rng = np.random.default_rng(0)
    for sig in (MergerSignature(2, (2,)), MergerSignature(3, (3,)), MergerSignature(4, (2, 2))):
        ex = cannings_p_rates(exact_law, sig)
        mc = cannings_p_rates(mc_law, sig, rng=rng, mc_draws=200000)
        assert ex.exact and not mc.exact
        assert abs(mc.value - ex.value) < 4 * mc.std_error + 1e-12


def test_cannings_rate_table_is_consistent():
    law = OffspringLaw("dirac-family", 6, vector=(3, 2, 1, 0, 0, 0))
    table = cannings_rate_table(law, T_N=10.0, n_max=5)
    assert check_consistency(table).passed


def test_sample_size_exceeding_population_rejected():
    with pytest.raises(ValueError):
        cannings_p_rates(OffspringLaw("trivial", 3), MergerSignature(4, (2,)))


def test_cannings_event_count_poisson():
    law = OffspringLaw("pair-resampling", 10)
    T_N, horizon = 30.0, 4.0
    rng = np.random.default_rng(1)
    counts = [
        cannings_simulate(law, T_N, horizon, 1, rng, warmup=1.0).times.size
        for _ in range(200)
    ]
    mean = np.mean(counts)
    expect = T_N * horizon
    z = (mean - expect) / math.sqrt(expect / 200)
    assert abs(z) < 3.5


def test_forward_run_positions_and_groups():
    law = OffspringLaw("pair-resampling", 8)
    rng = np.random.default_rng(2)
    run = cannings_simulate(law, 20.0, 2.0, 2, rng, warmup=1.0, grid_dt=0.5)
    assert run.n_levels == 8
    assert run.start_time == -2.0
    assert run.grid_times is not None and run.grid_times[0] == -2.0
    assert np.all((run.end_positions >= 0) & (run.end_positions < 1))
    for t, groups, pos in zip(run.times, run.groups, run.positions):
        assert -2.0 <= t <= 0.0
        for g in groups:
            assert len(g) == 2
            # both members of a group sit at the copied position
            assert np.array_equal(pos[g[0] - 1], pos[g[1] - 1])


def test_trace_ancestry_merges_pairs():
    # a fabricated event log: levels (1,2) merge at time -0.5, (1,3) at -1.5
    times = np.array([-1.5, -0.5])
    groups = [[(1, 3)], [(1, 2)]]
    blocks, history = trace_ancestry(times, groups, 3)
    assert len(blocks) == 1
    (bt1, _, part1, _), (bt2, _, part2, _) = history
    assert bt1 == pytest.approx(0.5)
    assert part1 == Partition([{1, 2}, {3}])
    assert bt2 == pytest.approx(1.5)
    assert part2 == Partition([{1, 2, 3}])


def test_extract_genealogy_block_structure_uniform_pairs():
    # under pair resampling each of the three pairs of a triple is equally
    # likely to merge first
    law = OffspringLaw("pair-resampling", 8)
    rng = np.random.default_rng(3)
    counts = {p: 0 for p in ((1, 2), (1, 3), (2, 3))}
    for _ in range(300):
        run = cannings_simulate(law, 28.0, 8.0, 1, rng, warmup=2.0)
        gen = extract_genealogy(run, 3)
        sig = gen.first_merge_signature()
        if sig is None:
            continue
        merged = next(
            b for b in gen.coalescent.events[0][1].blocks if len(b) >= 2
        )
        if len(merged) == 2:
            counts[tuple(sorted(merged))] += 1
    obs = np.array(list(counts.values()))
    assert obs.sum() > 200
    _, p = stats.chisquare(obs)
    assert p > 0.005


def test_extract_genealogy_paths_end_at_sample_positions():
    law = OffspringLaw("pair-resampling", 6)
    rng = np.random.default_rng(4)
    run = cannings_simulate(law, 15.0, 6.0, 2, rng, warmup=2.0)
    gen = extract_genealogy(run, 2)
    for i in (1, 2):
        b = frozenset({i})
        times, pos = gen.coalescent.paths[b]
        assert times[0] == 0.0
        assert np.array_equal(pos[0], run.end_positions[i - 1])
    with pytest.raises(ValueError):
        extract_genealogy(run, 7)


def test_lookdown_kingman_groups_are_pairs():
    rng = np.random.default_rng(5)
    run = lookdown_simulate(LambdaMeasure.kingman(), 5, 2.0, 1, rng, warmup=0.5)
    for groups in run.groups:
        assert all(len(g) == 2 for g in groups)


def test_lookdown_atom_group_sizes_binomial():
    # a single atom at xi = (0.5,): every level joins the basket with
    # probability 1/2 independently, so group sizes are Binomial(n, 1/2)
    # conditioned on >= 2
    n = 6
    X = XiMeasure(atoms=(((0.5,), 1.0),))
    rng = np.random.default_rng(6)
    sizes = []
    run = lookdown_simulate(X, n, 400.0, 1, rng, warmup=0.0)
    for groups in run.groups:
        for g in groups:
            sizes.append(len(g))
    ks = np.arange(2, n + 1)
    pmf = np.array([stats.binom.pmf(k, n, 0.5) for k in ks])
    pmf /= pmf.sum()
    obs = np.array([(np.array(sizes) == k).sum() for k in ks])
    assert obs.sum() > 300
    _, p = stats.chisquare(obs, obs.sum() * pmf)
    assert p > 0.005


def test_default_warmup_and_pair_rate():
    assert default_warmup(1.0) == 20.0
    assert default_warmup(0.1) == 100.0
    assert kingman_pair_rate(LambdaMeasure.kingman()) == 1.0
    assert kingman_pair_rate(XiMeasure(kingman_mass=0.5)) == 0.5


def test_harvester_observes_pairs():
    law = OffspringLaw("pair-resampling", 10)
    rng = np.random.default_rng(7)
    T_N = 45.0
    h = ForwardHarvester(
        10, 1, T_N, lambda r: _cannings_groups(law, r), rng, warmup=5.0
    )
    got = 0
    for _ in range(20):
        h.advance(3.0)
        sample_pos, bt, part, locs = h.observe(2)
        assert sample_pos.shape == (2, 1)
        if bt is not None:
            got += 1
            assert bt >= 0.0
            assert len(part) == 1
            assert set(locs) == {frozenset({1, 2})}
    assert got > 10
