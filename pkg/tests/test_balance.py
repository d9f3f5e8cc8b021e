import itertools
from fractions import Fraction

import numpy as np
import pytest

from dawnplan import (
    Cut,
    InfeasibleCutError,
    compute_balanced,
    memory_balanced_1f1b,
    memory_balanced_sync,
    schedule_weight,
    split_pair,
    stage_profiles,
)
from dawnplan.balance import SCHEDULE_ASYNC, SCHEDULE_SYNC

from chains import MIB, chain, bare_uniform, random_chain


def brute_force_min_max(g, lo, hi, weights):
    """Reference optimum: enumerate every cut tuple, lexicographic first."""
    parts = len(weights)
    best = None
    best_cuts = None
    for cuts in itertools.combinations(range(lo, hi), parts - 1):
        bounds = [lo, *[c + 1 for c in cuts], hi + 1]
        load = max(
            Fraction(g.segment_time(bounds[p], bounds[p + 1] - 1)) / Fraction(weights[p])
            for p in range(parts)
        )
        if best is None or load < best:
            best, best_cuts = load, cuts
    return best, best_cuts


class TestCut:
    def test_positions_strictly_increasing(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            Cut((3, 3))
        assert len(Cut((1, 4))) == 2


class TestScheduleWeight:
    @pytest.mark.parametrize("stage,stages,want", [
        (1, 4, 4), (2, 4, 3), (4, 4, 1), (1, 2, 2), (8, 8, 1),
    ])
    def test_async(self, stage, stages, want):
        assert schedule_weight(SCHEDULE_ASYNC, stage, stages) == want

    def test_sync_defaults_to_stage_count(self):
        assert schedule_weight(SCHEDULE_SYNC, 3, 4) == 4
        assert schedule_weight(SCHEDULE_SYNC, 1, 4, micro_batches=16) == 16

    def test_unknown_schedule(self):
        with pytest.raises(ValueError, match="unknown schedule"):
            schedule_weight("eager", 1, 2)


class TestComputeBalanced:
    def test_uniform_even_split(self, uni8):
        assert compute_balanced(uni8, 0, 7, [1, 1]).positions == (3,)
        assert compute_balanced(uni8, 0, 7, [1] * 4).positions == (1, 3, 5)

    def test_triangle(self, tri4):
        assert compute_balanced(tri4, 0, 3, [1, 1]).positions == (2,)

    def test_weighted(self, tri4):
        # doubling the second part's weight moves the boundary forward
        assert compute_balanced(tri4, 0, 3, [1, 2]).positions == (1,)

    def test_subrange(self, uni8):
        assert compute_balanced(uni8, 2, 7, [1, 1]).positions == (4,)

    @pytest.mark.parametrize("bad", [[], [1, -1], [0, 1]])
    def test_invalid_weights(self, uni8, bad):
        with pytest.raises(ValueError):
            compute_balanced(uni8, 0, 7, bad)

    def test_more_parts_than_nodes(self, tri4):
        with pytest.raises(ValueError, match="exceed"):
            compute_balanced(tri4, 0, 3, [1] * 5)

    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("parts", [2, 3, 4])
    def test_matches_exhaustive_enumeration(self, seed, parts):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(parts, 13))
        times = [int(rng.integers(1, 2000)) for _ in range(n)]
        g = chain(f"bf{seed}", times, [MIB] * n)
        weights = [int(rng.integers(1, 4)) for _ in range(parts)]
        want_load, want_cuts = brute_force_min_max(g, 0, n - 1, weights)
        got = compute_balanced(g, 0, n - 1, weights)
        bounds = [0, *[c + 1 for c in got.positions], n]
        got_load = max(
            Fraction(g.segment_time(bounds[p], bounds[p + 1] - 1)) / weights[p]
            for p in range(parts)
        )
        assert got_load == want_load
        assert got.positions == want_cuts  # lexicographic tie break


class TestMemoryBalanced:
    def test_uni8_async_two_stages(self, uni8):
        cut = memory_balanced_1f1b(uni8, 2)
        assert cut.positions == (2,)
        profs = stage_profiles(uni8, cut, 2, SCHEDULE_ASYNC)
        assert [p.sched_peak for p in profs] == [6 * MIB, 5 * MIB]

    def test_tri4_async_two_stages(self, tri4):
        cut = memory_balanced_1f1b(tri4, 2)
        assert cut.positions == (0,)
        profs = stage_profiles(tri4, cut, 2, SCHEDULE_ASYNC)
        assert [p.sched_peak for p in profs] == [8 * MIB, 6 * MIB]

    def test_uni8_async_four_stages(self, uni8):
        cut = memory_balanced_1f1b(uni8, 4)
        assert cut.positions == (0, 2, 4)
        profs = stage_profiles(uni8, cut, 4, SCHEDULE_ASYNC)
        assert [p.sched_peak / MIB for p in profs] == [4, 6, 4, 3]

    def test_uni8_sync_four_stages(self, uni8):
        assert memory_balanced_sync(uni8, 4).positions == (1, 3, 5)

    @pytest.mark.parametrize("n,stages", [(8, 2), (8, 4), (12, 3), (16, 8)])
    def test_sync_constant_memory_lands_near_even_split(self, n, stages):
        g = bare_uniform(n)
        cut = memory_balanced_sync(g, stages)
        for k, pos in enumerate(cut.positions, start=1):
            even = -(-k * n // stages) - 1  # ceil(k*n/stages), 0-based
            assert abs(pos - even) <= 1

    def test_too_many_stages(self, tri4):
        with pytest.raises(InfeasibleCutError, match="exceed"):
            memory_balanced_1f1b(tri4, 5)

    def test_front_loaded_memory_cannot_fill_targets(self):
        g = chain("front", [10] * 3, [10 * MIB, MIB, MIB])
        with pytest.raises(InfeasibleCutError, match="nonempty segments"):
            memory_balanced_1f1b(g, 3)

    def test_back_loaded_memory_empties_last_stage(self):
        g = chain("back", [10] * 3, [MIB, MIB, 10 * MIB])
        with pytest.raises(InfeasibleCutError, match="last stage would be empty"):
            memory_balanced_sync(g, 2)

    def test_zero_memory_graph(self):
        g = chain("dry", [10] * 4, [0] * 4)
        with pytest.raises(InfeasibleCutError, match="no peak memory"):
            memory_balanced_1f1b(g, 2)

    @pytest.mark.parametrize("seed", range(8))
    @pytest.mark.parametrize("schedule", [SCHEDULE_ASYNC, SCHEDULE_SYNC])
    def test_first_crossing_walk(self, seed, schedule):
        """Each cut lands on the first node whose running peak reaches the
        stage target; one node less and the stage sits below target."""
        rng = np.random.default_rng(100 + seed)
        g = random_chain(rng)
        stages = 4
        if schedule == SCHEDULE_ASYNC:
            cut = memory_balanced_1f1b(g, stages)
            div = sum(Fraction(stages, stages - i) for i in range(stages))
            m1 = Fraction(g.peak_memory) / div
            targets = [Fraction(stages, stages - x + 1) * m1
                       for x in range(1, stages + 1)]
        else:
            cut = memory_balanced_sync(g, stages)
            targets = [Fraction(g.peak_memory, stages)] * stages
        lo = 0
        for x, pos in enumerate(cut.positions):
            assert g.segment_peak(lo, pos) >= targets[x]
            if pos > lo:
                assert g.segment_peak(lo, pos - 1) < targets[x]
            lo = pos + 1


class TestSplitPair:
    def test_uni8_single_spans_async(self, uni8):
        assert split_pair(uni8, 0, 7, 2, SCHEDULE_ASYNC, (1,), (2,)) == (3, 2)

    def test_uni8_single_spans_sync(self, uni8):
        assert split_pair(uni8, 0, 7, 2, SCHEDULE_SYNC, (1,), (2,)) == (3, 3)

    def test_tri4_async(self, tri4):
        assert split_pair(tri4, 0, 3, 2, SCHEDULE_ASYNC, (1,), (2,)) == (2, 0)

    def test_uni8_wide_spans_async(self, uni8):
        got = split_pair(uni8, 0, 7, 4, SCHEDULE_ASYNC, (1, 2), (3, 4))
        assert got == (3, 2)

    def test_single_spans_agree_with_full_partitions(self, uni8):
        cb, mb = split_pair(uni8, 0, 7, 4, SCHEDULE_ASYNC, (1,), (2, 3, 4))
        assert cb == compute_balanced(uni8, 0, 7, [1] * 4).positions[0]
        assert mb == memory_balanced_1f1b(uni8, 4).positions[0]

    def test_positions_stay_inside_range(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            g = random_chain(rng)
            n = len(g.nodes)
            for schedule in (SCHEDULE_ASYNC, SCHEDULE_SYNC):
                cb, mb = split_pair(g, 0, n - 1, 4, schedule, (1, 2), (3, 4))
                assert 0 <= cb <= n - 2
                assert 0 <= mb <= n - 2

    def test_unknown_schedule(self, uni8):
        with pytest.raises(ValueError, match="unknown schedule"):
            split_pair(uni8, 0, 7, 2, "eager", (1,), (2,))


class TestStageProfiles:
    def test_tri4_profiles(self, tri4):
        profs = stage_profiles(tri4, Cut((0,)), 2, SCHEDULE_ASYNC)
        assert [(p.micro_peak, p.sched_peak, p.time) for p in profs] == [
            (4 * MIB, 8 * MIB, 1000),
            (6 * MIB, 6 * MIB, 9000),
        ]

    def test_sync_uses_micro_batches(self, uni8):
        profs = stage_profiles(uni8, Cut((3,)), 2, SCHEDULE_SYNC, micro_batches=16)
        assert [p.sched_peak for p in profs] == [64 * MIB, 64 * MIB]

    def test_arity_mismatch(self, uni8):
        with pytest.raises(ValueError, match="arity"):
            stage_profiles(uni8, Cut((3,)), 3, SCHEDULE_ASYNC)
