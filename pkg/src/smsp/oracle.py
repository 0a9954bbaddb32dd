"""Exhaustive ground-truth enumeration for micro instances.

Enumerates every feasible global schedule reachable by the decision model:
all batch partitions (blocks bounded by the maximum batch size), all machine
assignments with full tool-group flexibility (preallocation is deliberately
ignored), all per-machine execution orders, and all maintenance-insertion
patterns with at most one maintenance per label per gap.  Each candidate is
materialized as an explicit slot sequence and judged by the schedule
checker, so the oracle exercises the declarative semantics rather than the
solver's incremental bookkeeping.

This module is a verification fixture; it does not scale past micro sizes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator

from .instance import ANY, Instance, MaintTrigger, ident_key, lot_sort_key
from .schedule import (
    Batch,
    GlobalSchedule,
    MachineSchedule,
    Maint,
    NoFeasibleSchedule,
    Objectives,
    OpRef,
    SetupChange,
    check_machine,
    evaluate,
)


class LimitExceeded(Exception):
    """The enumeration state budget ran out; results are unusable."""


@dataclass(frozen=True)
class OracleLimits:
    max_lots: int = 3
    max_ops_per_lot: int = 4
    max_machines_per_group: int = 2
    max_enumerated_states: int = 10_000_000


def _check_within(inst: Instance, limits: OracleLimits):
    if len(inst.lots) > limits.max_lots:
        raise ValueError(f"instance has {len(inst.lots)} lots, oracle limit is {limits.max_lots}")
    for product, route in inst.routes.items():
        if len(route) > limits.max_ops_per_lot:
            raise ValueError(f"route of product {product!r} has {len(route)} operations, "
                             f"oracle limit is {limits.max_ops_per_lot}")
    for group, machines in inst.machines.items():
        if len(machines) > limits.max_machines_per_group:
            raise ValueError(f"group {group!r} has {len(machines)} machines, "
                             f"oracle limit is {limits.max_machines_per_group}")


def _partitions(members: tuple, max_block: int) -> Iterator[tuple[tuple, ...]]:
    """Set partitions with block sizes up to max_block, blocks as ascending
    tuples ordered by smallest member; deterministic recursive order."""
    if not members:
        yield ()
        return
    blocks: list[list] = []

    def rec(i: int):
        if i == len(members):
            yield tuple(tuple(b) for b in blocks)
            return
        for b in blocks:
            if len(b) < max_block:
                b.append(members[i])
                yield from rec(i + 1)
                b.pop()
        blocks.append([members[i]])
        yield from rec(i + 1)
        blocks.pop()

    yield from rec(0)


class _Budget:
    def __init__(self, limit: int):
        self.limit = limit
        self.used = 0

    def charge(self, n: int = 1):
        self.used += n
        if self.used > self.limit:
            raise LimitExceeded(f"enumeration exceeded {self.limit} states")


def _orders(batches: list, inst: Instance) -> Iterator[tuple]:
    """All execution orders of the given batches on one machine, respecting
    route order between batches that share a lot."""
    lots_of = [frozenset(b[1]) for b in batches]
    index_of = [b[0][1] for b in batches]

    def may_follow(placed: list[int], k: int) -> bool:
        for j in range(len(batches)):
            if j == k or j in placed:
                continue
            if lots_of[j] & lots_of[k] and index_of[j] < index_of[k]:
                return False
        return True

    def rec(placed: list[int]):
        if len(placed) == len(batches):
            yield tuple(placed)
            return
        for k in range(len(batches)):
            if k not in placed and may_follow(placed, k):
                placed.append(k)
                yield from rec(placed)
                placed.pop()

    yield from rec([])


def _decorated_sequences(machine, batches: list, inst: Instance,
                         budget: _Budget) -> list[tuple]:
    """Feasible slot sequences for one machine: every execution order of its
    batches crossed with every maintenance-insertion pattern that keeps the
    repetition windows intact.  Setup changes are derived, never guessed."""
    specs = inst.group_maints(machine.group)
    out: list[tuple] = []
    for order in _orders(batches, inst):
        ordered = [batches[k] for k in order]

        def rec(at: int, slots: list, counters: dict, setup):
            if at == len(ordered):
                budget.charge()
                candidate = tuple(slots)
                if not check_machine(MachineSchedule(machine, candidate), inst):
                    out.append(candidate)
                return
            (product, index), members = ordered[at]
            op = inst.op(product, index)
            contrib = {}
            for spec in specs:
                if spec.trigger is MaintTrigger.LOTS:
                    contrib[spec.label] = len(members)
                else:
                    contrib[spec.label] = len(members) * (op.proc_time // len(members))
            insertable = [spec for spec in specs if counters[spec.label] >= spec.window_min]
            for r in range(len(insertable) + 1):
                for chosen in itertools.combinations(insertable, r):
                    nxt = dict(counters)
                    for spec in chosen:
                        nxt[spec.label] = 0
                    overflow = False
                    for spec in specs:
                        nxt[spec.label] += contrib[spec.label]
                        if nxt[spec.label] > spec.window_max:
                            overflow = True
                    if overflow:
                        continue  # the window ending here is violated for good
                    gap = sorted(chosen, key=lambda s: (-s.duration, ident_key(s.label)))
                    added: list = [Maint(spec.label) for spec in gap]
                    new_setup = setup
                    if op.setup is not ANY and setup != op.setup:
                        added.append(SetupChange(op.setup))
                        new_setup = op.setup
                    added.append(Batch(OpRef(lot, index) for lot in members))
                    rec(at + 1, slots + added, nxt, new_setup)

        rec(0, [], {spec.label: 0 for spec in specs}, ANY)
    return out


def enumerate_schedules(inst: Instance, limits: OracleLimits | None = None
                        ) -> Iterator[tuple[GlobalSchedule, Objectives]]:
    """Stream of every distinct feasible global schedule with its objectives.

    Raises LimitExceeded once the state budget is consumed, and ValueError
    for instances beyond the size limits.
    """
    limits = limits or OracleLimits()
    _check_within(inst, limits)
    budget = _Budget(limits.max_enumerated_states)

    lots = sorted(inst.lots, key=lot_sort_key(inst.lots))
    pi_keys: list[tuple] = []
    pi_members: dict[tuple, list] = {}
    for lot in lots:
        for op in inst.routes[lot.product].steps:
            key = (lot.product, op.index)
            if key not in pi_members:
                pi_keys.append(key)
                pi_members[key] = []
            pi_members[key].append(lot.id)
    pi_keys.sort(key=lambda k: (ident_key(k[0]), k[1]))

    machines = inst.all_machines()
    pi_partitions = [
        list(_partitions(tuple(pi_members[key]), inst.op(*key).max_batch))
        for key in pi_keys
    ]
    seq_cache: dict = {}

    for combo in itertools.product(*pi_partitions):
        batches: list[tuple] = []  # ((product, index), members)
        for key, blocks in zip(pi_keys, combo):
            for block in blocks:
                batches.append((key, block))
        domains = [inst.group_machines(inst.op(*key).group) for key, _ in batches]
        for assignment in itertools.product(*domains):
            per_machine: dict = {mach.key: [] for mach in machines}
            for b, mach in zip(batches, assignment):
                per_machine[mach.key].append(b)
            rows = []
            feasible = True
            for mach in machines:
                key = (mach.key, tuple(sorted(map(str, per_machine[mach.key]))))
                if key not in seq_cache:
                    seq_cache[key] = _decorated_sequences(mach, per_machine[mach.key],
                                                          inst, budget)
                if not seq_cache[key]:
                    feasible = False
                    break
                rows.append(seq_cache[key])
            if not feasible:
                continue
            for chosen in itertools.product(*rows):
                budget.charge()
                gs = GlobalSchedule(
                    MachineSchedule(mach, slots) for mach, slots in zip(machines, chosen))
                verdict = evaluate(gs, inst)
                if isinstance(verdict, Objectives):
                    yield gs, verdict


def oracle_optimum(inst: Instance, limits: OracleLimits | None = None
                   ) -> tuple[Objectives, GlobalSchedule]:
    """Lexicographic minimum of (makespan, setup violations, batch violations)
    over all feasible schedules; ties go to the first schedule encountered."""
    best: tuple[Objectives, GlobalSchedule] | None = None
    for gs, objectives in enumerate_schedules(inst, limits):
        if best is None or objectives.as_tuple() < best[0].as_tuple():
            best = (objectives, gs)
    if best is None:
        raise NoFeasibleSchedule("exhaustive enumeration found no feasible schedule")
    return best
