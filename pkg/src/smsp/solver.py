"""Two-stage anytime branch-and-bound over batching, machine assignment,
execution order, and maintenance insertion.

Stage 1 minimizes makespan; each incumbent must strictly improve.  Stage 2
takes the stage-1 best as an upper bound on makespan and minimizes setup
violations, then batch violations, lexicographically.  Both stages share one
depth-first search over four decision families:

  1. per (product, route position): a partition of the product's lots into
     batches identified by their lexicographically smallest lot,
  2. per batch: one machine from the intersection of the members'
     preallocation sets,
  3. a chronological execution order built by appending ready batches (this
     generates exactly the left-shifted schedules, which suffice for all
     three objectives),
  4. per appended batch: the maintenance operations performed right before
     it, sequenced in decreasing duration.

Setup changes are never guessed: one is inserted exactly when the batch's
required setup is not already in place.  Search is admissibly bounded by
machine loads, per-lot remaining route times, and per-group average loads.
"""

from __future__ import annotations

import math
import random
import sys
import time
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Iterable, Iterator, Optional

from .instance import ANY, Ident, Instance, Machine, MaintTrigger, OpSpec, SetupId, \
    ident_key, lot_sort_key, minimal_batch_load
from .prealloc import AllocConfig, PreallocationMap, build_prealloc
from .schedule import (
    Batch,
    GlobalSchedule,
    MachineSchedule,
    Maint,
    NoFeasibleSchedule,
    Objectives,
    OpRef,
    SetupChange,
    TimedSchedule,
    compute_start_times,
    evaluate,
)


class SearchMode(Enum):
    EXACT_BNB = "exact"
    GREEDY_SEED_THEN_BNB = "greedy"


@dataclass(frozen=True)
class SolverConfig:
    """Budgets, preallocation strategy, and search mode.

    Limits are wall-clock seconds; ``None`` disables the corresponding limit.
    """

    stage1_limit: float | None = 450.0
    stage2_limit: float | None = 150.0
    prealloc: AllocConfig = AllocConfig()
    search: SearchMode = SearchMode.GREEDY_SEED_THEN_BNB
    rng_seed: int = 0

    def __post_init__(self):
        for limit in (self.stage1_limit, self.stage2_limit):
            if limit is not None and limit <= 0:
                raise ValueError("time limits must be positive")


@dataclass(frozen=True)
class IncumbentRecord:
    elapsed: float
    objectives: Objectives
    stage: int


@dataclass
class StageResult:
    """Outcome of one optimization stage."""

    best: TimedSchedule | None
    objectives: Objectives | None
    optimal: bool
    elapsed: float
    log: list[IncumbentRecord] = field(default_factory=list)


@dataclass
class SolveResult:
    best: TimedSchedule | None
    objectives: Objectives | None
    stage1_optimal: bool
    stage2_optimal: bool
    stage1_time: float
    stage2_time: float
    log: list[IncumbentRecord] = field(default_factory=list)


ProgressFn = Callable[[str], None]


class _TimeUp(Exception):
    pass


@lru_cache(maxsize=None)
def _masks_by_size(n: int) -> tuple[int, ...]:
    masks = sorted(range(1 << n), key=lambda m: (bin(m).count("1"), m))
    return tuple(masks)


@dataclass
class _MaintEntry:
    label: Ident
    is_time: bool
    window_min: int
    window_max: int
    duration: int


class _BatchVar:
    """One batch decided by the partition phase."""

    __slots__ = ("idx", "pi", "members", "size", "proc_time", "group", "setup",
                 "violation", "domain", "contrib", "machine", "appended", "min_batch")

    def __init__(self, idx, pi, members, op: OpSpec, group, domain, contrib):
        self.idx = idx
        self.pi = pi
        self.members = members
        self.size = len(members)
        self.proc_time = op.proc_time
        self.min_batch = op.min_batch
        self.group = group
        self.setup = op.setup
        self.violation = 1 if self.size < op.min_batch else 0
        self.domain = domain
        self.contrib = contrib
        self.machine = -1
        self.appended = False


class _Model:
    """Instance compiled to index-based tables for the search."""

    def __init__(self, inst: Instance, prealloc_map: PreallocationMap | None):
        self.inst = inst
        key = lot_sort_key(inst.lots)
        self.lots = sorted(inst.lots, key=key)
        self.lot_idx = {lot.id: li for li, lot in enumerate(self.lots)}
        self.lot_route = [inst.routes[lot.product].steps for lot in self.lots]
        # remaining[li][i] = processing time of route positions >= i (1-based)
        self.remaining = []
        for steps in self.lot_route:
            suffix = [0] * (len(steps) + 2)
            for i in range(len(steps), 0, -1):
                suffix[i] = suffix[i + 1] + steps[i - 1].proc_time
            self.remaining.append(suffix)

        self.groups: list[Ident] = sorted(inst.machines, key=ident_key)
        self.group_idx = {g: gi for gi, g in enumerate(self.groups)}
        self.machines: list[Machine] = []
        self.group_machines: list[list[int]] = []
        for g in self.groups:
            row = []
            for mach in inst.machines[g]:
                row.append(len(self.machines))
                self.machines.append(mach)
            self.group_machines.append(row)
        self.machine_group = [self.group_idx[m.group] for m in self.machines]

        self.group_maints: list[list[_MaintEntry]] = []
        for g in self.groups:
            entries = [_MaintEntry(s.label, s.trigger is MaintTrigger.TIME,
                                   s.window_min, s.window_max, s.duration)
                       for s in inst.group_maints(g)]
            entries.sort(key=lambda e: (-e.duration, ident_key(e.label)))
            self.group_maints.append(entries)

        self.setup_specs = {}
        for (g, sid), spec in inst.setups.items():
            if g in self.group_idx:
                self.setup_specs[(self.group_idx[g], sid)] = (spec.change_time, spec.min_ops)

        self.op_domain: dict[tuple[int, int], tuple[int, ...]] = {}
        for li, lot in enumerate(self.lots):
            for op in self.lot_route[li]:
                gi = self.group_idx.get(op.group)
                if gi is None:
                    raise NoFeasibleSchedule(f"tool group {op.group!r} has no machine")
                if prealloc_map is None:
                    dom = tuple(self.group_machines[gi])
                else:
                    allowed = prealloc_map[OpRef(lot.id, op.index)]
                    by_id = {self.machines[m].id: m for m in self.group_machines[gi]}
                    dom = tuple(by_id[a] for a in allowed)
                self.op_domain[(li, op.index)] = dom

        # pi slots: one partition decision per (product, route position)
        members_by_pi: dict[tuple[Ident, int], list[int]] = {}
        for li, lot in enumerate(self.lots):
            for op in self.lot_route[li]:
                members_by_pi.setdefault((lot.product, op.index), []).append(li)
        self.pi_keys = sorted(members_by_pi, key=lambda k: (ident_key(k[0]), k[1]))
        self.pi_members = [tuple(members_by_pi[k]) for k in self.pi_keys]
        self.pi_ops: list[OpSpec] = [inst.op(p, i) for p, i in self.pi_keys]
        self.pi_group = [self.group_idx[op.group] for op in self.pi_ops]
        self.pi_allowed_sizes: list[frozenset[int]] = []
        self.pi_safe_cap: list[int] = []
        self.pi_min_load: list[int] = []
        for pi, op in enumerate(self.pi_ops):
            allowed = set()
            safe_cap = 0
            for k in range(1, op.max_batch + 1):
                entries = self.group_maints[self.pi_group[pi]]
                if all(self._contribution(e, op, k) <= e.window_max for e in entries):
                    allowed.add(k)
                    # "safe" sizes leave room to insert a forced maintenance at
                    # any point: the contribution fits above every window_min.
                    if all(self._contribution(e, op, k) <= e.window_max - e.window_min
                           for e in entries):
                        safe_cap = max(safe_cap, k)
            if not allowed:
                raise NoFeasibleSchedule(
                    f"operation {op.index} of product {op.product!r} cannot satisfy the "
                    f"maintenance windows of group {op.group!r} at any batch size")
            self.pi_allowed_sizes.append(frozenset(allowed))
            self.pi_safe_cap.append(safe_cap)
            n = len(members_by_pi[self.pi_keys[pi]])
            self.pi_min_load.append(math.ceil(n / op.max_batch) * op.proc_time)

    @staticmethod
    def _contribution(entry: _MaintEntry, op: OpSpec, size: int) -> int:
        return size * (op.proc_time // size) if entry.is_time else size

    def partitions(self, pi: int) -> Iterator[tuple[tuple[int, ...], ...]]:
        """All partitions of the pi slot's lots into allowed block sizes.

        Yield order prefers maximal batching within the safe size cap (batches
        a forced maintenance can always be inserted in front of), then
        singletons, then the remaining oversized blocks, which makes the first
        descent of the search a robust dispatch heuristic.  Blocks are
        ascending lot-index tuples.
        """
        members = self.pi_members[pi]
        allowed = self.pi_allowed_sizes[pi]
        safe_cap = self.pi_safe_cap[pi]
        cap = max(allowed)
        blocks: list[list[int]] = []

        def rec(i: int) -> Iterator[tuple[tuple[int, ...], ...]]:
            if i == len(members):
                if all(len(b) in allowed for b in blocks):
                    yield tuple(tuple(b) for b in blocks)
                return
            li = members[i]
            options: list[int] = [bi for bi in range(len(blocks)) if len(blocks[bi]) < cap]
            options.append(-1)  # open a new block
            options.sort(key=lambda bi: ((0 if len(blocks[bi]) + 1 <= safe_cap else 1, -(len(blocks[bi]) + 1))
                                         if bi >= 0 else (0 if safe_cap >= 1 else 1, -1)))
            for bi in options:
                if bi >= 0:
                    blocks[bi].append(li)
                    yield from rec(i + 1)
                    blocks[bi].pop()
                else:
                    blocks.append([li])
                    yield from rec(i + 1)
                    blocks.pop()

        yield from rec(0)

    def block_domain(self, pi: int, block: tuple[int, ...]) -> tuple[int, ...]:
        index = self.pi_keys[pi][1]
        dom = self.op_domain[(block[0], index)]
        for li in block[1:]:
            other = set(self.op_domain[(li, index)])
            dom = tuple(m for m in dom if m in other)
        return dom

    def make_batch(self, idx: int, pi: int, block: tuple[int, ...]) -> _BatchVar:
        op = self.pi_ops[pi]
        gi = self.pi_group[pi]
        contrib = [self._contribution(e, op, len(block)) for e in self.group_maints[gi]]
        return _BatchVar(idx, pi, block, op, gi, self.block_domain(pi, block), contrib)


class _SearchCore:
    """Mutable search state with apply/undo and an admissible makespan bound."""

    def __init__(self, model: _Model):
        self.model = model
        n_m = len(model.machines)
        self.avail = [0] * n_m
        self.setup_state: list[SetupId] = [ANY] * n_m
        self.counters = [[0] * len(model.group_maints[model.machine_group[m]])
                         for m in range(n_m)]
        self.pending_min = [-1] * n_m  # min_ops of last installed setup, -1 if none
        self.pending_count = [0] * n_m
        self.assigned_load = [0] * n_m
        self.group_pending = [0] * len(model.groups)
        self.group_avail_sum = [0] * len(model.groups)
        for pi, load in enumerate(model.pi_min_load):
            self.group_pending[model.pi_group[pi]] += load
        self.lot_ptr = [1] * len(model.lots)
        self.lot_done = [0] * len(model.lots)
        self.batches: list[_BatchVar] = []
        self.partition_done = [False] * len(model.pi_keys)
        self.seq: list[list[tuple[_BatchVar, tuple[int, ...], Ident | None, int]]] = \
            [[] for _ in range(n_m)]
        self.makespan = 0
        self.last_start = 0
        self.appended = 0
        self.setup_viol = 0
        self.batch_viol = 0

    # -- phase 1: partitions -------------------------------------------------

    def apply_partition(self, pi: int, blocks: tuple[tuple[int, ...], ...]):
        model = self.model
        created = []
        viol = 0
        for block in blocks:
            b = model.make_batch(len(self.batches), pi, block)
            self.batches.append(b)
            created.append(b)
            viol += b.violation
        load = sum(b.proc_time for b in created)
        gi = model.pi_group[pi]
        self.group_pending[gi] += load - model.pi_min_load[pi]
        self.batch_viol += viol
        self.partition_done[pi] = True
        return (pi, created, load, viol)

    def undo_partition(self, token):
        pi, created, load, viol = token
        gi = self.model.pi_group[pi]
        del self.batches[len(self.batches) - len(created):]
        self.group_pending[gi] -= load - self.model.pi_min_load[pi]
        self.batch_viol -= viol
        self.partition_done[pi] = False

    # -- phase 2: machine assignment ------------------------------------------

    def apply_assignment(self, b: _BatchVar, m: int):
        b.machine = m
        self.assigned_load[m] += b.proc_time
        self.group_pending[b.group] -= b.proc_time

    def undo_assignment(self, b: _BatchVar, m: int):
        b.machine = -1
        self.assigned_load[m] -= b.proc_time
        self.group_pending[b.group] += b.proc_time

    # -- phase 3+4: chronological appends --------------------------------------

    def ready(self, b: _BatchVar) -> bool:
        index = self.model.pi_keys[b.pi][1]
        return all(self.lot_ptr[li] == index for li in b.members)

    def gap_choices(self, b: _BatchVar) -> list[tuple[int, ...]]:
        """Maintenance-label index tuples insertable before b on its machine;
        None-equivalent empty list when the batch cannot be placed now."""
        m = b.machine
        entries = self.model.group_maints[b.group]
        counters = self.counters[m]
        forced, optional = [], []
        for k, entry in enumerate(entries):
            if counters[k] + b.contrib[k] > entry.window_max:
                if counters[k] < entry.window_min:
                    return []
                forced.append(k)
            elif counters[k] >= max(entry.window_min, 1):
                optional.append(k)
        out = []
        for mask in _masks_by_size(len(optional)):
            chosen = tuple(sorted(forced + [optional[j] for j in range(len(optional))
                                            if mask >> j & 1]))
            out.append(chosen)
        return out

    def peek_append(self, b: _BatchVar, maints: tuple[int, ...]) -> tuple[int, int, int]:
        """(start, completion, gap delay) of appending b after the given
        maintenance operations, without mutating state."""
        m = b.machine
        entries = self.model.group_maints[b.group]
        delay = sum(entries[k].duration for k in maints)
        setup_time = 0
        if b.setup is not ANY and self.setup_state[m] != b.setup:
            setup_time = self.model.setup_specs[(b.group, b.setup)][0]
        delay += setup_time
        ready_at = max((self.lot_done[li] for li in b.members), default=0)
        start = max(self.avail[m] + delay, ready_at)
        return start, start + b.proc_time, delay

    def apply_append(self, b: _BatchVar, maints: tuple[int, ...]):
        model = self.model
        m = b.machine
        gi = model.machine_group[m]
        entries = model.group_maints[b.group]
        start, completion, _ = self.peek_append(b, maints)

        saved_counters = list(self.counters[m])
        token = (b, maints, self.avail[m], self.setup_state[m], saved_counters,
                 self.pending_min[m], self.pending_count[m], self.makespan,
                 self.last_start, [self.lot_done[li] for li in b.members],
                 self.setup_viol)

        for k in maints:
            self.counters[m][k] = 0
        for k in range(len(entries)):
            self.counters[m][k] += b.contrib[k]

        new_setup: Ident | None = None
        if b.setup is not ANY and self.setup_state[m] != b.setup:
            if self.pending_min[m] >= 0 and self.pending_count[m] < self.pending_min[m]:
                self.setup_viol += 1
            self.setup_state[m] = b.setup
            self.pending_min[m] = model.setup_specs[(b.group, b.setup)][1]
            self.pending_count[m] = 0
            new_setup = b.setup
        self.pending_count[m] += 1

        self.group_avail_sum[gi] += completion - self.avail[m]
        self.avail[m] = completion
        self.assigned_load[m] -= b.proc_time
        self.makespan = max(self.makespan, completion)
        self.last_start = start
        for li in b.members:
            self.lot_ptr[li] += 1
            self.lot_done[li] = completion
        b.appended = True
        self.appended += 1
        self.seq[m].append((b, maints, new_setup, start))
        return token

    def undo_append(self, token):
        b, maints, avail, setup_state, counters, p_min, p_count, mk, last, dones, sviol = token
        m = b.machine
        gi = self.model.machine_group[m]
        self.seq[m].pop()
        self.appended -= 1
        b.appended = False
        for li, done in zip(b.members, dones):
            self.lot_ptr[li] -= 1
            self.lot_done[li] = done
        self.group_avail_sum[gi] -= self.avail[m] - avail
        self.avail[m] = avail
        self.assigned_load[m] += b.proc_time
        self.setup_state[m] = setup_state
        self.counters[m][:] = counters
        self.pending_min[m] = p_min
        self.pending_count[m] = p_count
        self.makespan = mk
        self.last_start = last
        self.setup_viol = sviol

    # -- bound ----------------------------------------------------------------

    def lower_bound(self) -> int:
        model = self.model
        bound = self.makespan
        for li in range(len(model.lots)):
            b = self.lot_done[li] + model.remaining[li][self.lot_ptr[li]]
            if b > bound:
                bound = b
        for m in range(len(model.machines)):
            b = self.avail[m] + self.assigned_load[m]
            if b > bound:
                bound = b
        for gi, row in enumerate(model.group_machines):
            remaining = self.group_pending[gi] + sum(self.assigned_load[m] for m in row)
            b = math.ceil((self.group_avail_sum[gi] + remaining) / len(row))
            if b > bound:
                bound = b
        return bound

    # -- materialization --------------------------------------------------------

    def to_schedule(self) -> GlobalSchedule:
        model = self.model
        schedules = []
        for m, mach in enumerate(model.machines):
            slots = []
            for b, maints, new_setup, _ in self.seq[m]:
                entries = model.group_maints[b.group]
                for k in maints:
                    slots.append(Maint(entries[k].label))
                if new_setup is not None:
                    slots.append(SetupChange(new_setup))
                slots.append(Batch(OpRef(model.lots[li].id, model.pi_keys[b.pi][1])
                                   for li in b.members))
            schedules.append(MachineSchedule(mach, slots))
        return GlobalSchedule(schedules)


# --- public decision-space description --------------------------------------


class DecisionModel:
    """Search-space description: the four decision families of the solver."""

    def __init__(self, inst: Instance, prealloc_map: PreallocationMap | None = None):
        self._model = _Model(inst, prealloc_map)

    def batch_choices(self, product: Ident, index: int) -> list[tuple[tuple[Ident, ...], ...]]:
        """Partitions of the product's lots at a route position, as lot-id
        blocks identified by their lexicographically smallest member."""
        model = self._model
        pi = model.pi_keys.index((product, index))
        out = []
        for blocks in model.partitions(pi):
            out.append(tuple(tuple(model.lots[li].id for li in block) for block in blocks))
        return out

    def machine_options(self, ops: Iterable[OpRef]) -> tuple[Machine, ...]:
        """Machines shared by all preallocation sets of the given operations
        (empty means the batch is impossible and the branch is pruned)."""
        model = self._model
        dom: tuple[int, ...] | None = None
        for ref in ops:
            li = model.lot_idx[ref.lot]
            cur = model.op_domain[(li, ref.index)]
            if dom is None:
                dom = cur
            else:
                keep = set(cur)
                dom = tuple(m for m in dom if m in keep)
        return tuple(model.machines[m] for m in (dom or ()))

    def gap_preops(self, group: Ident, installed: SetupId, op_setup: SetupId,
                   maint_labels: Iterable[Ident]) -> tuple[tuple, int]:
        """Slots derived before a production slot: requested maintenances in
        decreasing duration order, then a setup change exactly when the
        required setup is not in place.  Returns (slots, total delay)."""
        model = self._model
        gi = model.group_idx[group]
        entries = {e.label: e for e in model.group_maints[gi]}
        ordered = sorted(maint_labels, key=lambda lb: (-entries[lb].duration, ident_key(lb)))
        slots: list = [Maint(lb) for lb in ordered]
        delay = sum(entries[lb].duration for lb in ordered)
        if op_setup is not ANY and installed != op_setup:
            slots.append(SetupChange(op_setup))
            delay += model.setup_specs[(gi, op_setup)][0]
        return tuple(slots), delay


def decision_model(inst: Instance, prealloc_map: PreallocationMap | None = None) -> DecisionModel:
    return DecisionModel(inst, prealloc_map)


# --- public partial states ----------------------------------------------------


class PartialState:
    """Replayable prefix of solver decisions, for bound inspection.

    Decisions are applied in order: partitions, then assignments, then
    chronological appends; ``lower_bound`` never exceeds the makespan of any
    feasible completion of the prefix.
    """

    def __init__(self, inst: Instance, prealloc_map: PreallocationMap | None = None):
        self._model = _Model(inst, prealloc_map)
        self._core = _SearchCore(self._model)
        self._batch_by_key: dict[tuple, _BatchVar] = {}

    @classmethod
    def initial(cls, inst: Instance, prealloc_map: PreallocationMap | None = None) -> "PartialState":
        return cls(inst, prealloc_map)

    def _key(self, product: Ident, index: int, block: tuple[Ident, ...]) -> tuple:
        return (product, index, tuple(sorted(block, key=ident_key)))

    def add_partition(self, product: Ident, index: int,
                      blocks: Iterable[Iterable[Ident]]) -> "PartialState":
        model = self._model
        pi = model.pi_keys.index((product, index))
        resolved = tuple(tuple(sorted(model.lot_idx[lot] for lot in block)) for block in blocks)
        covered = sorted(li for block in resolved for li in block)
        if covered != sorted(model.pi_members[pi]):
            raise ValueError("blocks must partition the product's lots")
        _, created, _, _ = self._core.apply_partition(pi, resolved)
        for b in created:
            ids = tuple(model.lots[li].id for li in b.members)
            self._batch_by_key[self._key(product, index, ids)] = b
        return self

    def assign(self, product: Ident, index: int, block: Iterable[Ident],
               machine_id: Ident) -> "PartialState":
        b = self._batch_by_key[self._key(product, index, tuple(block))]
        group = self._model.groups[b.group]
        for m in b.domain:
            if self._model.machines[m].id == machine_id:
                self._core.apply_assignment(b, m)
                return self
        raise ValueError(f"machine {machine_id!r} of group {group!r} not in the batch's domain")

    def append(self, product: Ident, index: int, block: Iterable[Ident],
               maints: Iterable[Ident] = ()) -> "PartialState":
        b = self._batch_by_key[self._key(product, index, tuple(block))]
        if b.machine < 0:
            raise ValueError("batch must be assigned to a machine before appending")
        if not self._core.ready(b):
            raise ValueError("route predecessors of the batch are not scheduled yet")
        entries = self._model.group_maints[b.group]
        index_of = {e.label: k for k, e in enumerate(entries)}
        chosen = tuple(sorted(index_of[lb] for lb in maints))
        if chosen not in self._core.gap_choices(b):
            raise ValueError("maintenance choice violates a repetition window")
        self._core.apply_append(b, chosen)
        return self

    def lower_bound(self) -> int:
        return self._core.lower_bound()

    def schedule(self) -> GlobalSchedule:
        return self._core.to_schedule()


def lower_bound(state: PartialState) -> int:
    """Admissible makespan bound of a partial solver state."""
    return state.lower_bound()


# --- search driver -------------------------------------------------------------


class _Search:
    def __init__(self, model: _Model, deadline: float | None, rng: random.Random | None):
        self.model = model
        self.core = _SearchCore(model)
        self.deadline = deadline
        self.rng = rng
        self.nodes = 0
        self.stop_after_first = False
        self.timed_out = False
        # stage parameters
        self.stage = 1
        self.ub_makespan: float = math.inf
        self.cap_makespan: float = math.inf
        self.ub_viol: tuple[float, float] = (math.inf, math.inf)
        self.on_incumbent: Callable[[GlobalSchedule, int], None] | None = None

    def _tick(self):
        self.nodes += 1
        if self.deadline is not None and self.nodes % 256 == 0:
            if time.monotonic() >= self.deadline:
                raise _TimeUp()

    def _prune(self) -> bool:
        bound = self.core.lower_bound()
        if self.stage == 1:
            return bound >= self.ub_makespan
        if bound > self.cap_makespan:
            return True
        pair = (self.core.setup_viol, self.core.batch_viol)
        return pair >= self.ub_viol

    def run(self):
        try:
            self._phase_partition(0)
        except _TimeUp:
            self.timed_out = True

    def _phase_partition(self, at: int):
        self._tick()
        if self._prune():
            return
        model = self.model
        if at == len(model.pi_keys):
            self._phase_assign(0)
            return
        for blocks in model.partitions(at):
            if any(not model.block_domain(at, block) for block in blocks):
                continue  # no shared machine for some block
            token = self.core.apply_partition(at, blocks)
            self._phase_partition(at + 1)
            self.core.undo_partition(token)
            if self.stop_after_first and self.ub_makespan < math.inf:
                return

    def _phase_assign(self, at: int):
        self._tick()
        if self._prune():
            return
        core = self.core
        if at == len(core.batches):
            self._phase_append()
            return
        b = core.batches[at]
        options = sorted(b.domain, key=lambda m: (core.assigned_load[m] + core.avail[m], m))
        for m in options:
            core.apply_assignment(b, m)
            self._phase_assign(at + 1)
            core.undo_assignment(b, m)
            if self.stop_after_first and self.ub_makespan < math.inf:
                return

    def _candidates(self):
        core = self.core
        out = []
        for b in core.batches:
            if b.appended or not core.ready(b):
                continue
            for maints in core.gap_choices(b):
                start, completion, delay = core.peek_append(b, maints)
                if start < core.last_start:
                    continue  # canonical order: appends by nondecreasing start
                jitter = self.rng.random() if self.rng is not None else 0.0
                # Start-first ordering keeps the first descent aligned with the
                # canonical nondecreasing-start append rule.
                out.append((start, completion, len(maints), jitter, b.idx, b, maints))
        out.sort(key=lambda c: c[:5])
        return out

    def _phase_append(self):
        self._tick()
        core = self.core
        if core.appended == len(core.batches):
            self._leaf()
            return
        if self._prune():
            return
        for *_, b, maints in self._candidates():
            token = core.apply_append(b, maints)
            self._phase_append()
            core.undo_append(token)
            if self.stop_after_first and self.ub_makespan < math.inf:
                return
            if self.stage == 1:
                if core.lower_bound() >= self.ub_makespan:
                    return
            elif (core.setup_viol, core.batch_viol) >= self.ub_viol:
                return

    def _leaf(self):
        core = self.core
        if self.stage == 1:
            if core.makespan >= self.ub_makespan:
                return
            self.ub_makespan = core.makespan
        else:
            pair = (core.setup_viol, core.batch_viol)
            if pair >= self.ub_viol:
                return
            self.ub_viol = pair
        if self.on_incumbent is not None:
            self.on_incumbent(core.to_schedule(), core.makespan)


def _stage(model: _Model, stage: int, limit: float | None, mode: SearchMode,
           rng_seed: int, progress: ProgressFn | None, t0: float,
           log: list[IncumbentRecord], cap_makespan: float = math.inf,
           init_viol: tuple[float, float] = (math.inf, math.inf),
           seed_only: bool = False) -> StageResult:
    start = time.monotonic()
    deadline = None if limit is None else start + limit
    rng = random.Random(rng_seed) if (mode is SearchMode.GREEDY_SEED_THEN_BNB and stage == 1) else None
    search = _Search(model, deadline, rng)
    search.stage = stage
    search.cap_makespan = cap_makespan
    search.ub_viol = init_viol
    search.stop_after_first = seed_only

    best: dict = {"schedule": None, "objectives": None}

    def on_incumbent(gs: GlobalSchedule, mk: int):
        verdict = evaluate(gs, model.inst)
        assert isinstance(verdict, Objectives), f"incumbent rejected by checker: {verdict}"
        assert verdict.makespan == mk
        best["schedule"] = gs
        best["objectives"] = verdict
        elapsed = time.monotonic() - t0
        log.append(IncumbentRecord(elapsed, verdict, stage))
        if progress is not None:
            progress(f"{int(elapsed * 1000)} {verdict.makespan} "
                     f"{verdict.setup_violations} {verdict.batch_violations}")

    search.on_incumbent = on_incumbent
    search.run()
    elapsed = time.monotonic() - start
    objectives = best["objectives"]
    timed = None
    if best["schedule"] is not None:
        timed = compute_start_times(best["schedule"], model.inst)
    return StageResult(timed, objectives, not search.timed_out, elapsed, log)


def minimize_violations(inst: Instance, fixed_makespan: int,
                        cfg: SolverConfig | None = None,
                        prealloc_map: PreallocationMap | None = None,
                        progress: ProgressFn | None = None) -> StageResult:
    """Stage 2 standalone: lexicographically minimize (setup violations,
    batch violations) over schedules with makespan at most fixed_makespan."""
    cfg = cfg or SolverConfig()
    if prealloc_map is None:
        prealloc_map = build_prealloc(inst, cfg.prealloc)
    model = _Model(inst, prealloc_map)
    log: list[IncumbentRecord] = []
    return _stage(model, 2, cfg.stage2_limit, cfg.search, cfg.rng_seed,
                  progress, time.monotonic(), log, cap_makespan=fixed_makespan)


def solve(inst: Instance, cfg: SolverConfig | None = None,
          progress: ProgressFn | None = None) -> SolveResult:
    """Two-stage optimization; anytime under the configured wall-clock limits.

    Raises NoFeasibleSchedule when stage 1 exhausts the space without finding
    any schedule; a timeout without an incumbent returns an empty result
    instead, since nothing was proven.
    """
    cfg = cfg or SolverConfig()
    prealloc_map = build_prealloc(inst, cfg.prealloc)
    model = _Model(inst, prealloc_map)
    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 4 * len(model.lots) * max(
        (len(r) for r in model.lot_route), default=1) + 10000))

    t0 = time.monotonic()
    log: list[IncumbentRecord] = []

    stage1_deadline = None if cfg.stage1_limit is None else cfg.stage1_limit
    if cfg.search is SearchMode.GREEDY_SEED_THEN_BNB:
        seed_res = _stage(model, 1, stage1_deadline, cfg.search, cfg.rng_seed,
                          progress, t0, log, seed_only=True)
        remaining = None
        if cfg.stage1_limit is not None:
            remaining = max(cfg.stage1_limit - seed_res.elapsed, 0.001)
        follow = _stage_with_ub(model, cfg, remaining, progress, t0, log, seed_res)
        stage1 = follow
        stage1.elapsed += seed_res.elapsed
    else:
        stage1 = _stage(model, 1, stage1_deadline, cfg.search, cfg.rng_seed,
                        progress, t0, log)

    if stage1.best is None:
        if stage1.optimal:
            raise NoFeasibleSchedule("search space exhausted without a feasible schedule")
        return SolveResult(None, None, False, False, stage1.elapsed, 0.0, log)

    assert stage1.objectives is not None
    cap = stage1.objectives.makespan
    stage2 = _stage(model, 2, cfg.stage2_limit, cfg.search, cfg.rng_seed,
                    progress, t0, log, cap_makespan=cap,
                    init_viol=(stage1.objectives.setup_violations,
                               stage1.objectives.batch_violations))
    best = stage2.best if stage2.best is not None else stage1.best
    objectives = stage2.objectives if stage2.objectives is not None else stage1.objectives
    return SolveResult(best, objectives, stage1.optimal, stage2.optimal,
                       stage1.elapsed, stage2.elapsed, log)


def _stage_with_ub(model: _Model, cfg: SolverConfig, limit: float | None,
                   progress: ProgressFn | None, t0: float,
                   log: list[IncumbentRecord], seed: StageResult) -> StageResult:
    """Stage 1 continuation after greedy seeding: rerun the complete search
    with the seed's makespan installed as the upper bound."""
    start = time.monotonic()
    deadline = None if limit is None else start + limit
    search = _Search(model, deadline, random.Random(cfg.rng_seed))
    search.stage = 1
    if seed.objectives is not None:
        search.ub_makespan = seed.objectives.makespan

    best = {"schedule": None, "objectives": seed.objectives, "timed": seed.best}

    def on_incumbent(gs: GlobalSchedule, mk: int):
        verdict = evaluate(gs, model.inst)
        assert isinstance(verdict, Objectives), f"incumbent rejected by checker: {verdict}"
        best["schedule"] = gs
        best["objectives"] = verdict
        elapsed = time.monotonic() - t0
        log.append(IncumbentRecord(elapsed, verdict, 1))
        if progress is not None:
            progress(f"{int(elapsed * 1000)} {verdict.makespan} "
                     f"{verdict.setup_violations} {verdict.batch_violations}")

    search.on_incumbent = on_incumbent
    search.run()
    elapsed = time.monotonic() - start
    if best["schedule"] is not None:
        best["timed"] = compute_start_times(best["schedule"], model.inst)
    return StageResult(best["timed"], best["objectives"], not search.timed_out, elapsed, log)
