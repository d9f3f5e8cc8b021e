"""Planner and simulator for memory-constrained pipeline-parallel training.

Given a profiled fine-grained computation graph, find a pipeline partition
plus per-stage swap/recomputation plans that minimize the bottleneck stage
time under a per-device memory capacity, and simulate synchronous and
1F1B schedules over the result.
"""

from .balance import (SCHEDULE_ASYNC, SCHEDULE_SYNC, Cut, InfeasibleCutError,
                      StageMemProfile, compute_balanced, memory_balanced_1f1b,
                      memory_balanced_sync, schedule_weight, split_pair,
                      stage_profiles)
from .conditions import TheoremConditionReport, check_theorem_conditions
from .graph import (MIB, ComputationGraph, ProfiledNode, ProfileParseError,
                    ProfileValidationError, TensorRef, canonical_hash,
                    cumulative_series, load_profile, memory_cdf, profile_doc,
                    save_profile, transfer_time_us)
from .memopt import (MemOptAction, MemOptPlan, RecomputeCandidate,
                     SwapCandidate, build_stage_timeline, collect_candidates,
                     exhaustive_optimize, optimize)
from .oracle import (InstanceTooLargeError, TheoremVerification,
                     exhaustive_plan, verify_theorem)
from .partition import (CandidateCut, InfeasibleModelError, PartitionPlan,
                        PlanConfig, SearchStep, candidate_cuts, inevitable_comm,
                        load_plan_doc, plan, plan_from_cuts, plan_from_doc,
                        plan_json, plan_with_trace, save_plan, stage_bounds)
from .simulate import (SimConfig, SimEvent, SimReport, compare_plans,
                       simulate, trace_to_csv)
from .synth import gen_cnn_like, gen_transformer_like, gen_uniform

__version__ = "0.1.0"

__all__ = [
    "MIB",
    "CandidateCut",
    "ComputationGraph",
    "Cut",
    "InfeasibleCutError",
    "InfeasibleModelError",
    "InstanceTooLargeError",
    "MemOptAction",
    "MemOptPlan",
    "PartitionPlan",
    "PlanConfig",
    "ProfiledNode",
    "ProfileParseError",
    "ProfileValidationError",
    "RecomputeCandidate",
    "SCHEDULE_ASYNC",
    "SCHEDULE_SYNC",
    "SearchStep",
    "SimConfig",
    "SimEvent",
    "SimReport",
    "StageMemProfile",
    "SwapCandidate",
    "TensorRef",
    "TheoremConditionReport",
    "TheoremVerification",
    "build_stage_timeline",
    "candidate_cuts",
    "canonical_hash",
    "check_theorem_conditions",
    "collect_candidates",
    "compare_plans",
    "compute_balanced",
    "cumulative_series",
    "exhaustive_optimize",
    "exhaustive_plan",
    "gen_cnn_like",
    "gen_transformer_like",
    "gen_uniform",
    "inevitable_comm",
    "load_plan_doc",
    "load_profile",
    "memory_balanced_1f1b",
    "memory_balanced_sync",
    "memory_cdf",
    "optimize",
    "plan",
    "plan_from_cuts",
    "plan_from_doc",
    "plan_json",
    "plan_with_trace",
    "profile_doc",
    "save_plan",
    "save_profile",
    "schedule_weight",
    "simulate",
    "split_pair",
    "stage_bounds",
    "stage_profiles",
    "trace_to_csv",
    "transfer_time_us",
    "verify_theorem",
]
