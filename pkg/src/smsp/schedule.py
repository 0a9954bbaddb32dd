"""Schedule representation and its complete semantics.

A machine schedule is an ordered sequence of slots: production batches,
setup changes, and maintenance operations.  This module defines per-machine
feasibility (setups in place, maintenance repetition windows), earliest start
times via longest-path propagation over machine order and route precedence,
cyclic-waiting detection, and the three objectives (makespan, setup
violations, batch violations) compared lexicographically in that order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Union

from .instance import ANY, Ident, Instance, Machine, MaintTrigger, OpSpec, SetupId


class ScheduleError(Exception):
    """Structurally broken schedule (unknown references, malformed batches),
    as opposed to an infeasible but well-formed one."""


class NoFeasibleSchedule(Exception):
    """The instance admits no globally feasible schedule."""


@dataclass(frozen=True)
class OpRef:
    """The index-th production operation of a lot."""

    lot: Ident
    index: int

    def __repr__(self):
        return f"l{self.lot}[{self.index}]"


@dataclass(frozen=True)
class Batch:
    """A set of same-product, same-index operations processed simultaneously."""

    ops: frozenset[OpRef]

    def __init__(self, ops: Iterable[OpRef]):
        object.__setattr__(self, "ops", frozenset(ops))
        if not self.ops:
            raise ScheduleError("batch must contain at least one operation")


@dataclass(frozen=True)
class SetupChange:
    setup: Ident


@dataclass(frozen=True)
class Maint:
    label: Ident


Slot = Union[Batch, SetupChange, Maint]


@dataclass(frozen=True)
class MachineSchedule:
    machine: Machine
    slots: tuple[Slot, ...]

    def __init__(self, machine: Machine, slots: Iterable[Slot]):
        object.__setattr__(self, "machine", machine)
        object.__setattr__(self, "slots", tuple(slots))


@dataclass(frozen=True)
class GlobalSchedule:
    """One MachineSchedule per machine; operations live in exactly one batch."""

    schedules: tuple[MachineSchedule, ...]

    def __init__(self, schedules: Iterable[MachineSchedule]):
        object.__setattr__(self, "schedules", tuple(schedules))

    def machine_schedule(self, machine: Machine) -> MachineSchedule:
        for ms in self.schedules:
            if ms.machine == machine:
                return ms
        raise ScheduleError(f"no schedule for machine {machine.key!r}")


@dataclass(frozen=True)
class TimedSchedule:
    """A global schedule annotated with earliest start times per slot."""

    schedule: GlobalSchedule
    starts: tuple[tuple[int, ...], ...]  # parallels schedule.schedules
    durations: tuple[tuple[int, ...], ...]

    def machine_rows(self):
        for ms, starts, durs in zip(self.schedule.schedules, self.starts, self.durations):
            yield ms, starts, durs

    def completion(self, machine_pos: int, slot_pos: int) -> int:
        return self.starts[machine_pos][slot_pos] + self.durations[machine_pos][slot_pos]


@dataclass(frozen=True, order=True)
class Objectives:
    """Schedule quality; comparison is lexicographic in field order."""

    makespan: int
    setup_violations: int
    batch_violations: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.makespan, self.setup_violations, self.batch_violations)


@dataclass(frozen=True)
class Violation:
    """One broken hard constraint, named by kind and located on a machine."""

    kind: str  # coverage | setup-not-in-place | batch-over-capacity |
    #            maintenance-max-exceeded | maintenance-min-not-reached |
    #            cyclic-dependency
    machine: tuple[Ident, Ident] | None
    position: int | None  # 1-based slot position
    message: str

    def __str__(self):
        where = ""
        if self.machine is not None:
            where = f" [machine {self.machine[0]}/{self.machine[1]}"
            where += f" slot {self.position}]" if self.position is not None else "]"
        return f"{self.kind}{where}: {self.message}"


@dataclass(frozen=True)
class Infeasible:
    """Verdict carrying the itemized violations that reject a schedule."""

    violations: tuple[Violation, ...]

    def __str__(self):
        return "; ".join(str(v) for v in self.violations)


class CyclicDependencyError(ScheduleError):
    """Circular waiting dependencies make start times infinite.

    ``edges`` lists the waiting edges of one cycle as human-readable strings.
    """

    def __init__(self, edges: list[str]):
        super().__init__("circular waiting dependencies: " + " -> ".join(edges))
        self.edges = edges


def batch_lots(slot: Slot) -> frozenset[OpRef]:
    """Operations processed in a slot; empty for setup/maintenance slots."""
    if isinstance(slot, Batch):
        return slot.ops
    return frozenset()


def _batch_spec(slot: Batch, inst: Instance) -> OpSpec:
    """Common OpSpec of a batch, validating membership structurally."""
    spec: OpSpec | None = None
    for ref in slot.ops:
        try:
            lot = inst.lot_by_id(ref.lot)
        except KeyError:
            raise ScheduleError(f"batch references unknown lot {ref.lot!r}") from None
        if not 1 <= ref.index <= inst.route_len(lot.product):
            raise ScheduleError(f"operation index {ref.index} out of route for lot {ref.lot!r}")
        op = inst.lot_op(lot, ref.index)
        if spec is None:
            spec = op
        elif (op.product, op.index) != (spec.product, spec.index):
            raise ScheduleError("batch mixes different products or route positions: "
                                f"{sorted(map(repr, slot.ops))}")
    assert spec is not None
    return spec


def slot_duration(slot: Slot, inst: Instance, group: Ident) -> int:
    """Operation time of a slot: full processing time for a batch (independent
    of batch size), change time for a setup, duration for a maintenance."""
    if isinstance(slot, Batch):
        return _batch_spec(slot, inst).proc_time
    if isinstance(slot, SetupChange):
        key = (group, slot.setup)
        if key not in inst.setups:
            raise ScheduleError(f"undeclared setup {slot.setup!r} for group {group!r}")
        return inst.setups[key].change_time
    for spec in inst.group_maints(group):
        if spec.label == slot.label:
            return spec.duration
    raise ScheduleError(f"undeclared maintenance {slot.label!r} for group {group!r}")


def setup_states(ms: MachineSchedule) -> list[SetupId]:
    """Setup in place at each slot position, starting from the don't-care
    initial state; a change takes effect at the following slot."""
    states: list[SetupId] = []
    current: SetupId = ANY
    for slot in ms.slots:
        states.append(current)
        if isinstance(slot, SetupChange):
            current = slot.setup
    return states


def _time_share(op: OpSpec, size: int) -> int:
    # Per-lot share uses integer floor division: k lots contribute k*(T // k).
    return size * (op.proc_time // size)


def check_machine(ms: MachineSchedule, inst: Instance) -> list[Violation]:
    """Hard-constraint check of one machine schedule.

    Returns the itemized violations (empty means feasible): required setups in
    place, batch capacity, and maintenance windows, where every prefix window
    is bounded by the maximum and the minimum is enforced at maintenance slots
    only (no end-of-horizon minimum).
    """
    group = ms.machine.group
    if ms.machine not in inst.group_machines(group):
        raise ScheduleError(f"unknown machine {ms.machine.key!r}")
    violations: list[Violation] = []
    states = setup_states(ms)
    specs = inst.group_maints(group)
    counters = {spec.label: 0 for spec in specs}
    by_label = {spec.label: spec for spec in specs}

    for pos, slot in enumerate(ms.slots, start=1):
        if isinstance(slot, Batch):
            op = _batch_spec(slot, inst)
            if op.group != group:
                raise ScheduleError(f"batch for tool group {op.group!r} scheduled on machine "
                                    f"{ms.machine.key!r}")
            if len(slot.ops) > op.max_batch:
                violations.append(Violation("batch-over-capacity", ms.machine.key, pos,
                                            f"{len(slot.ops)} lots exceed max batch {op.max_batch}"))
            if op.setup is not ANY and states[pos - 1] != op.setup:
                violations.append(Violation("setup-not-in-place", ms.machine.key, pos,
                                            f"requires {op.setup!r}, machine has {states[pos - 1]!r}"))
            for spec in specs:
                if spec.trigger is MaintTrigger.LOTS:
                    counters[spec.label] += len(slot.ops)
                else:
                    counters[spec.label] += _time_share(op, len(slot.ops))
                if counters[spec.label] > spec.window_max:
                    violations.append(Violation(
                        "maintenance-max-exceeded", ms.machine.key, pos,
                        f"{spec.label!r} window reaches {counters[spec.label]} > {spec.window_max}"))
        elif isinstance(slot, SetupChange):
            slot_duration(slot, inst, group)  # structural validation
        else:
            spec = by_label.get(slot.label)
            if spec is None:
                raise ScheduleError(f"undeclared maintenance {slot.label!r} for group {group!r}")
            if counters[slot.label] < spec.window_min:
                violations.append(Violation(
                    "maintenance-min-not-reached", ms.machine.key, pos,
                    f"{spec.label!r} performed at {counters[slot.label]} < {spec.window_min}"))
            counters[slot.label] = 0
    return violations


def _coverage(gs: GlobalSchedule, inst: Instance) -> dict[OpRef, tuple[int, int]] | Infeasible:
    """Map every operation to its (machine position, slot position), or report
    missing/duplicated operations."""
    seen: dict[OpRef, tuple[int, int]] = {}
    violations: list[Violation] = []
    for mi, ms in enumerate(gs.schedules):
        for si, slot in enumerate(ms.slots):
            for ref in batch_lots(slot):
                if ref in seen:
                    violations.append(Violation("coverage", ms.machine.key, si + 1,
                                                f"operation {ref!r} scheduled more than once"))
                seen[ref] = (mi, si)
    for lot in inst.lots:
        for index in range(1, inst.route_len(lot.product) + 1):
            ref = OpRef(lot.id, index)
            if ref not in seen:
                violations.append(Violation("coverage", None, None,
                                            f"operation {ref!r} missing from the schedule"))
    if violations:
        return Infeasible(tuple(violations))
    return seen


def compute_start_times(gs: GlobalSchedule, inst: Instance) -> TimedSchedule:
    """Earliest start times as a longest-path fixpoint over the precedence
    graph (machine-sequence edges plus route edges between consecutive
    operations of a lot).  Raises CyclicDependencyError on circular waiting,
    naming the edges of one cycle.
    """
    cov = _coverage(gs, inst)
    if isinstance(cov, Infeasible):
        raise ScheduleError(f"schedule violates coverage: {cov}")

    durations = [
        [slot_duration(slot, inst, ms.machine.group) for slot in ms.slots]
        for ms in gs.schedules
    ]
    nodes = [(mi, si) for mi, ms in enumerate(gs.schedules) for si in range(len(ms.slots))]
    # edge: (src, dst, weight, description)
    edges: list[tuple[tuple[int, int], tuple[int, int], int, str]] = []

    def _name(node: tuple[int, int]) -> str:
        ms = gs.schedules[node[0]]
        return f"{ms.machine.group}/{ms.machine.id} slot {node[1] + 1}"

    for mi, ms in enumerate(gs.schedules):
        for si in range(1, len(ms.slots)):
            edges.append(((mi, si - 1), (mi, si), durations[mi][si - 1], "machine order"))
        for si, slot in enumerate(ms.slots):
            for ref in batch_lots(slot):
                if ref.index > 1:
                    src = cov[OpRef(ref.lot, ref.index - 1)]
                    edges.append((src, (mi, si), durations[src[0]][src[1]],
                                  f"lot {ref.lot} op {ref.index - 1}->{ref.index}"))

    succ: dict[tuple[int, int], list[int]] = {n: [] for n in nodes}
    indeg = {n: 0 for n in nodes}
    for ei, (src, dst, _, _) in enumerate(edges):
        succ[src].append(ei)
        indeg[dst] += 1

    start = {n: 0 for n in nodes}
    queue = [n for n in nodes if indeg[n] == 0]
    done = 0
    while queue:
        node = queue.pop()
        done += 1
        for ei in succ[node]:
            _, dst, weight, _ = edges[ei]
            start[dst] = max(start[dst], start[node] + weight)
            indeg[dst] -= 1
            if indeg[dst] == 0:
                queue.append(dst)
    if done < len(nodes):
        # Every node left over by the topological sort keeps a predecessor
        # inside the residual graph, so walking backwards must loop.
        residual = {n for n in nodes if indeg[n] > 0}
        pred: dict[tuple[int, int], int] = {}
        for ei, (src, dst, _, _) in enumerate(edges):
            if src in residual and dst in residual:
                pred.setdefault(dst, ei)
        node = min(residual)
        path, path_edges = [node], []
        while True:
            ei = pred[node]
            node = edges[ei][0]
            path_edges.append(ei)
            if node in path:
                cut = path.index(node)
                cycle = [
                    f"{_name(edges[e][0])} -> {_name(edges[e][1])} ({edges[e][3]})"
                    for e in reversed(path_edges[cut:])
                ]
                raise CyclicDependencyError(cycle)
            path.append(node)

    starts = tuple(
        tuple(start[(mi, si)] for si in range(len(ms.slots)))
        for mi, ms in enumerate(gs.schedules)
    )
    return TimedSchedule(gs, starts, tuple(tuple(row) for row in durations))


def makespan(ts: TimedSchedule) -> int:
    """Maximum completion time over all machines (0 for empty schedules)."""
    best = 0
    for _, starts, durs in ts.machine_rows():
        if starts:
            best = max(best, starts[-1] + durs[-1])
    return best


def count_setup_violations(gs: GlobalSchedule, inst: Instance) -> int:
    """Setup changes followed by another change before the installed setup's
    minimum number of production slots (batch slots count once, regardless of
    batch size).  The last change on a machine never counts."""
    total = 0
    for ms in gs.schedules:
        changes = [(pos, slot.setup) for pos, slot in enumerate(ms.slots)
                   if isinstance(slot, SetupChange)]
        for (pos, setup), (nxt, _) in zip(changes, changes[1:]):
            spec = inst.setup_spec(ms.machine.group, setup)
            slots_between = sum(1 for s in ms.slots[pos + 1:nxt] if isinstance(s, Batch))
            if slots_between < spec.min_ops:
                total += 1
    return total


def count_batch_violations(gs: GlobalSchedule, inst: Instance) -> int:
    """Batch slots smaller than the operation's minimum batch size."""
    total = 0
    for ms in gs.schedules:
        for slot in ms.slots:
            if isinstance(slot, Batch):
                if len(slot.ops) < _batch_spec(slot, inst).min_batch:
                    total += 1
    return total


def evaluate(gs: GlobalSchedule, inst: Instance) -> Objectives | Infeasible:
    """Full schedule evaluation: coverage, per-machine feasibility, global
    start times, then the objective triple.  Structural problems raise
    ScheduleError; semantic rejections come back as Infeasible."""
    cov = _coverage(gs, inst)
    if isinstance(cov, Infeasible):
        return cov
    violations: list[Violation] = []
    for ms in gs.schedules:
        violations.extend(check_machine(ms, inst))
    if violations:
        return Infeasible(tuple(violations))
    try:
        ts = compute_start_times(gs, inst)
    except CyclicDependencyError as err:
        return Infeasible((Violation("cyclic-dependency", None, None, str(err)),))
    return Objectives(makespan(ts),
                      count_setup_violations(gs, inst),
                      count_batch_violations(gs, inst))


# --- JSON schedule document ------------------------------------------------
#
# Wire format: an array of machines, each {"group": g, "machine": id,
# "slots": [...]}, slots being {"kind": "batch"|"setup"|"maint", plus
# "ops"/"setup"/"label", "start", "duration"}.

def to_json_doc(ts: TimedSchedule) -> list[dict]:
    doc = []
    for ms, starts, durs in ts.machine_rows():
        slots = []
        for slot, start, dur in zip(ms.slots, starts, durs):
            entry: dict = {"start": start, "duration": dur}
            if isinstance(slot, Batch):
                entry["kind"] = "batch"
                entry["ops"] = [{"lot": ref.lot, "index": ref.index}
                                for ref in sorted(slot.ops, key=lambda r: (str(r.lot), r.index))]
            elif isinstance(slot, SetupChange):
                entry["kind"] = "setup"
                entry["setup"] = slot.setup
            else:
                entry["kind"] = "maint"
                entry["label"] = slot.label
            slots.append(entry)
        doc.append({"group": ms.machine.group, "machine": ms.machine.id, "slots": slots})
    return doc


def from_json_doc(doc: list[dict]) -> GlobalSchedule:
    """Rebuild the slot structure from a schedule document; start times are
    recomputed on evaluation rather than trusted."""
    schedules = []
    for entry in doc:
        machine = Machine(entry["group"], entry["machine"])
        slots: list[Slot] = []
        for raw in entry["slots"]:
            kind = raw.get("kind")
            if kind == "batch":
                slots.append(Batch(OpRef(o["lot"], o["index"]) for o in raw["ops"]))
            elif kind == "setup":
                slots.append(SetupChange(raw["setup"]))
            elif kind == "maint":
                slots.append(Maint(raw["label"]))
            else:
                raise ScheduleError(f"unknown slot kind {kind!r}")
        schedules.append(MachineSchedule(machine, slots))
    return GlobalSchedule(schedules)


def dump_json(ts: TimedSchedule) -> str:
    return json.dumps(to_json_doc(ts), indent=2)


def load_json(text: str) -> GlobalSchedule:
    return from_json_doc(json.loads(text))
