import json

import numpy as np
import pytest

from dawnplan import (
    InfeasibleModelError,
    candidate_cuts,
    gen_uniform,
    inevitable_comm,
    load_plan_doc,
    plan,
    plan_from_cuts,
    plan_from_doc,
    plan_json,
    plan_with_trace,
    save_plan,
    stage_bounds,
)
from dawnplan.balance import SCHEDULE_ASYNC, SCHEDULE_SYNC, compute_balanced, stage_profiles
from dawnplan.partition import PlanConfig, _common_leaf_shift, _crossing_bytes

from chains import GIB, MIB, bare_uniform, chain, diamond5, random_chain

BW16 = 16 * GIB


def acfg(stages=2, capacity=12 * MIB, bandwidth=BW16, **kw):
    return PlanConfig(stages=stages, schedule=SCHEDULE_ASYNC,
                      capacity=capacity, bandwidth=bandwidth, **kw)


class TestConfig:
    @pytest.mark.parametrize("kw,err", [
        (dict(stages=0), "stages"),
        (dict(schedule="eager"), "unknown schedule"),
        (dict(capacity=0), "capacity"),
        (dict(bandwidth=0), "bandwidth"),
        (dict(comm_cap=0.0), "comm_cap"),
        (dict(jobs=0), "jobs"),
    ])
    def test_validation(self, kw, err):
        args = dict(stages=2, schedule=SCHEDULE_ASYNC, capacity=MIB,
                    bandwidth=BW16)
        args.update(kw)
        with pytest.raises(ValueError, match=err):
            PlanConfig(**args)


class TestStageBounds:
    def test_bounds(self):
        from dawnplan.balance import Cut
        assert stage_bounds(Cut((2, 5)), 8) == [(0, 2), (3, 5), (6, 7)]


class TestInevitableComm:
    def test_chain_collapsed_interval(self, uni8):
        assert inevitable_comm(uni8, 3, 3) == frozenset({(3, 4)})

    def test_chain_wide_interval_has_none(self, uni8):
        assert inevitable_comm(uni8, 3, 5) == frozenset()

    def test_long_edge_spanning_interval(self):
        g = diamond5()  # a feeds c across any cut between them
        assert (0, 2) in inevitable_comm(g, 0, 1)
        assert inevitable_comm(g, 0, 2) == frozenset()


class TestCrossingBytes:
    def test_chain_counts_adjacent_producer_only(self, uni8):
        assert _crossing_bytes(uni8, 2, 4) == [MIB, MIB, MIB]

    def test_inevitable_edges_excluded(self):
        g = diamond5()
        # b->d spans the whole interval [1, 2] and is excluded; a->c
        # crosses position 1 and c->d crosses position 2
        assert _crossing_bytes(g, 1, 2) == [MIB, MIB]

    def test_wider_interval_charges_span_edges(self):
        g = diamond5()
        # over [1, 3] nothing is inevitable: b->d crosses positions 1-2
        assert _crossing_bytes(g, 1, 3) == [2 * MIB, 2 * MIB, MIB]


class TestCommonLeafShift:
    def test_same_depth_pair_shifts_past_consumer(self):
        g = diamond5()
        assert _common_leaf_shift(g, 2, 4, 3) == 3

    def test_shift_respects_interval_end(self):
        g = diamond5()
        assert _common_leaf_shift(g, 2, 4, 2) == 2

    def test_distinct_depths_unchanged(self):
        g = diamond5()
        assert _common_leaf_shift(g, 1, 4, 3) == 1

    def test_plain_chain_unchanged(self, uni8):
        assert _common_leaf_shift(uni8, 3, 7, 5) == 3


class TestCandidateCuts:
    def test_orders_from_memory_end(self, uni8):
        cands = candidate_cuts(uni8, 0, 7, 3, 2, 1, 1, BW16, 0.5)
        assert [c.position for c in cands] == [2, 3]
        assert all(c.comm_bytes == MIB for c in cands)

    def test_dedupes_after_adjustment(self):
        g = diamond5()
        # position 2 severs the same-depth b, c pair; it shifts past their
        # common consumer d and merges with the candidate already there
        cands = candidate_cuts(g, 0, 4, 3, 1, 1, 1, BW16, 2.0)
        assert [c.position for c in cands] == [1, 3]
        by_pos = {c.position: c.comm_bytes for c in cands}
        assert by_pos[3] == MIB  # single crossing tensor after the shift
        assert by_pos[1] == 2 * MIB

    def test_filter_keeps_fallback(self):
        g = bare_uniform(6, t_us=100, m_bytes=GIB)
        cands = candidate_cuts(g, 0, 5, 2, 1, 1, 1, 1_000_000, 0.5)
        assert len(cands) == 1
        assert cands[0].position == 1  # unfiltered memory-balanced endpoint

    def test_tight_comm_cap_filters_the_shifted_pair(self):
        g = diamond5()
        # at 0.5 both survivors exceed their side averages; only the
        # memory-balanced endpoint remains
        cands = candidate_cuts(g, 0, 4, 3, 1, 1, 1, BW16, 0.5)
        assert [c.position for c in cands] == [1]

    def test_degenerate_interval(self, uni8):
        cands = candidate_cuts(uni8, 0, 7, 3, 3, 1, 1, BW16, 0.5)
        assert [c.position for c in cands] == [3]


class TestPlanner:
    def test_uni8_ample(self, uni8):
        p = plan(uni8, acfg(capacity=12 * MIB))
        assert p.cuts.positions == (3,)
        assert p.bottleneck_time == 4000
        assert p.effective_times() == (4000, 4000)
        assert all(m.actions == () for m in p.memopt)

    def test_uni8_tight_moves_cut_back(self, uni8):
        # async stage 1 holds two replicas; 7 MiB forces a 3/5 split
        p = plan(uni8, acfg(capacity=7 * MIB))
        assert p.cuts.positions == (2,)
        assert p.effective_times() == (3000, 5000)

    def test_uni8_four_stages(self, uni8):
        p = plan(uni8, acfg(stages=4, capacity=12 * MIB))
        assert p.cuts.positions == (1, 3, 5)
        assert p.effective_times() == (2000, 2000, 2000, 2000)

    def test_bare_graph_infeasible_names_worst_stage(self, uni8):
        with pytest.raises(InfeasibleModelError,
                           match=r"stage 1 of the compute-balanced baseline "
                                 r"needs 8388608 bytes"):
            plan(uni8, acfg(capacity=2 * MIB))

    def test_evictable_tensors_rescue_tight_capacity(self):
        g = gen_uniform(8, 1000, MIB)  # same shape, swappable activations
        p = plan(g, acfg(capacity=2 * MIB))
        assert p.cuts.positions == (3,)
        assert p.effective_times() == (4000, 4000)
        assert [len(m.actions) for m in p.memopt] == [3, 2]
        assert p.oversubscribed_stages() == ()

    def test_tri4_trace(self, tri4):
        p, trace = plan_with_trace(tri4, acfg(capacity=9 * MIB))
        assert p.cuts.positions == (0,)
        assert p.bottleneck_time == 9000
        assert [(s.lo, s.hi, s.cb, s.mb, s.chosen) for s in trace] == \
            [(0, 3, 2, 0, 0)]

    def test_stage_count_exceeding_nodes(self, tri4):
        with pytest.raises(InfeasibleModelError, match="exceed"):
            plan(tri4, acfg(stages=5, capacity=64 * MIB))

    def test_single_stage(self, tri4):
        p = plan(tri4, acfg(stages=1, capacity=16 * MIB))
        assert p.cuts.positions == ()
        assert p.bottleneck_time == 10000

    @pytest.mark.parametrize("frac", [2.0, 1.15, 0.95])
    @pytest.mark.parametrize("stages", [2, 4])
    def test_search_stays_inside_balanced_interval(self, frac, stages):
        """Every search level picks inside [min(cb, mb), max(cb, mb)]."""
        rng = np.random.default_rng(60 + stages)
        for _ in range(8):
            g = random_chain(rng)
            cb = compute_balanced(g, 0, len(g.nodes) - 1, [1] * stages)
            profs = stage_profiles(g, cb, stages, SCHEDULE_ASYNC)
            cap = int(frac * max(p.sched_peak for p in profs))
            p, trace = plan_with_trace(g, acfg(stages=stages, capacity=cap))
            assert trace, "search must record at least one step"
            chosen = set()
            for s in trace:
                if s.chosen is None:
                    continue
                assert min(s.cb, s.mb) <= s.chosen <= max(s.cb, s.mb)
                chosen.add(s.chosen)
            assert set(p.cuts.positions) <= chosen

    def test_early_break_matches_full_scan(self):
        """Feasibility is monotone along the candidate order on this
        family, so stopping at the first failure loses nothing."""
        rng = np.random.default_rng(91)
        for _ in range(10):
            g = random_chain(rng)
            n = len(g.nodes)
            cb = compute_balanced(g, 0, n - 1, [1, 1])
            profs = stage_profiles(g, cb, 2, SCHEDULE_ASYNC)
            cap = int(0.95 * max(p.sched_peak for p in profs))
            cfg = acfg(capacity=cap)
            from dawnplan.balance import split_pair
            cbp, mbp = split_pair(g, 0, n - 1, 2, SCHEDULE_ASYNC, (1,), (2,))
            cands = candidate_cuts(g, 0, n - 1, cbp, mbp, 1, 1,
                                   cfg.bandwidth, cfg.comm_cap)
            feas = []
            results = []
            for c in cands:
                try:
                    fp = plan_from_cuts(g, cfg, (c.position,))
                    feas.append(True)
                    results.append((max(fp.effective_times()), c.position))
                except InfeasibleModelError:
                    feas.append(False)
            # monotone: no feasible candidate after the first infeasible one
            if False in feas:
                assert not any(feas[feas.index(False):])
            full_best = min(results)
            p = plan(g, cfg)
            assert (max(p.effective_times()), p.cuts.positions[0]) == full_best

    def test_jobs_do_not_change_the_plan(self):
        rng = np.random.default_rng(17)
        for _ in range(6):
            g = random_chain(rng)
            cb = compute_balanced(g, 0, len(g.nodes) - 1, [1] * 4)
            profs = stage_profiles(g, cb, 4, SCHEDULE_ASYNC)
            cap = int(1.15 * max(p.sched_peak for p in profs))
            p1 = plan(g, acfg(stages=4, capacity=cap, jobs=1))
            p4 = plan(g, acfg(stages=4, capacity=cap, jobs=4))
            assert plan_json(p1) == plan_json(p4)


class TestFixedCuts:
    def test_matches_search_policy(self, uni8):
        cfg = acfg(capacity=7 * MIB)
        assert plan_json(plan_from_cuts(uni8, cfg, (2,))) == plan_json(plan(uni8, cfg))

    def test_arity_check(self, uni8):
        with pytest.raises(ValueError, match="arity"):
            plan_from_cuts(uni8, acfg(), (1, 3))

    def test_infeasible_stage_named(self, uni8):
        with pytest.raises(InfeasibleModelError, match=r"stage 2 over nodes \[1, 7\]"):
            plan_from_cuts(uni8, acfg(capacity=6 * MIB), (0,))

    def test_oversubscribed_allowed_when_not_required(self, uni8):
        p = plan_from_cuts(uni8, acfg(capacity=6 * MIB), (0,),
                           require_feasible=False)
        assert p.oversubscribed_stages() == (2,)
        assert p.memopt[1].actions == ()


class TestPlanFiles:
    def test_round_trip(self, tmp_path, uni8):
        p = plan(uni8, acfg(capacity=7 * MIB))
        f = tmp_path / "u8.plan"
        save_plan(p, f)
        doc = load_plan_doc(f)
        p2 = plan_from_doc(uni8, doc)
        assert p2.cuts.positions == p.cuts.positions
        assert p2.bottleneck_time == p.bottleneck_time
        assert p2.memopt == p.memopt
        assert plan_json(p2) == plan_json(p)

    def test_wrong_graph_rejected(self, tmp_path, uni8, tri4):
        p = plan(uni8, acfg(capacity=7 * MIB))
        with pytest.raises(ValueError, match="hash mismatch"):
            plan_from_doc(tri4, json.loads(plan_json(p)))

    def test_tampered_times_rejected(self, uni8):
        p = plan(uni8, acfg(capacity=7 * MIB))
        doc = json.loads(plan_json(p))
        doc["stages"][0]["T_us"] += 1
        with pytest.raises(ValueError, match="disagree with the graph"):
            plan_from_doc(uni8, doc)

    def test_schema_and_missing_keys(self, tmp_path):
        f = tmp_path / "x.plan"
        f.write_text(json.dumps({"schema": 99}))
        with pytest.raises(ValueError, match="not a schema"):
            load_plan_doc(f)
        f.write_text(json.dumps({"schema": 1, "graph": {}, "config": {},
                                 "cuts": [], "stages": []}))
        with pytest.raises(ValueError, match="missing 'bottleneck_us'"):
            load_plan_doc(f)
