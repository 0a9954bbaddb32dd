"""Semiconductor manufacturing scheduling toolkit.

Parse fact-format instances, reason about machine schedules with batching,
setup, and maintenance operations, optimize them in two stages (makespan,
then lexicographic setup/batch-violation minimization), and verify results
against an exhaustive oracle on micro instances.
"""

from .facts import FactsError, parse_facts, serialize_facts
from .instance import (
    ANY,
    Instance,
    Lot,
    Machine,
    MaintTrigger,
    MaintenanceSpec,
    OpSpec,
    Route,
    SetupSpec,
    generate_instance,
    make_instance,
    validate_instance,
)
from .oracle import LimitExceeded, OracleLimits, enumerate_schedules, oracle_optimum
from .prealloc import (
    AllocConfig,
    Subgroup,
    allocate_by_setup,
    allocate_subgroups,
    build_prealloc,
    index_operations,
    partition_subgroups,
)
from .render import gantt_svg, gantt_text
from .schedule import (
    Batch,
    CyclicDependencyError,
    GlobalSchedule,
    Infeasible,
    MachineSchedule,
    Maint,
    NoFeasibleSchedule,
    Objectives,
    OpRef,
    ScheduleError,
    SetupChange,
    TimedSchedule,
    check_machine,
    compute_start_times,
    count_batch_violations,
    count_setup_violations,
    evaluate,
    from_json_doc,
    makespan,
    setup_states,
    to_json_doc,
)
from .solver import (
    DecisionModel,
    PartialState,
    SearchMode,
    SolveResult,
    SolverConfig,
    decision_model,
    lower_bound,
    minimize_violations,
    solve,
)

__version__ = "0.1.0"
