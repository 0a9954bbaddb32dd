"""Static preallocation: bounding the machines assignable to each operation.

Three composable strategies restrict where an operation may run before any
search happens.  ``sub_size`` partitions each tool group into contiguous
subgroups and confines operations to one of them (0 keeps the full group,
1 fixes a single machine); ``lot_step`` controls whether all visits of a lot
to a group share one index or get successive indexes (spreading revisits over
subgroups round robin); ``by_setup`` additionally pins operations inside a
subgroup to specific machines, grouping them by setup so that setup changes
are rarely needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .instance import ANY, Ident, Instance, Machine, ident_key, lot_sort_key
from .schedule import OpRef


@dataclass(frozen=True)
class AllocConfig:
    """Preallocation strategy constants."""

    sub_size: int = 0
    lot_step: int = 0
    by_setup: bool = False

    def __post_init__(self):
        if self.sub_size < 0:
            raise ValueError("sub_size must be nonnegative")
        if self.lot_step not in (0, 1):
            raise ValueError("lot_step must be 0 or 1")


@dataclass(frozen=True)
class Subgroup:
    """Contiguous slice of a tool group's machines; ordinals start at 1."""

    group: Ident
    ordinal: int
    machines: tuple[Machine, ...]


# Values are machine-id tuples in the group's declaration order.
PreallocationMap = dict[OpRef, tuple[Ident, ...]]


def partition_subgroups(machines: Iterable[Machine], sub_size: int) -> list[Subgroup]:
    """Split N machines into ceil(N / sub_size) contiguous subgroups of size
    sub_size or sub_size - 1 (larger ones first), keeping declaration order."""
    machines = list(machines)
    if sub_size < 2:
        raise ValueError("partitioning applies to sub_size >= 2")
    if not machines:
        raise ValueError("cannot partition an empty tool group")
    group = machines[0].group
    n = len(machines)
    if n <= sub_size:
        return [Subgroup(group, 1, tuple(machines))]
    count = -(-n // sub_size)
    larger = n - count * (sub_size - 1)
    sizes = [sub_size] * larger + [sub_size - 1] * (count - larger)
    out, at = [], 0
    for ordinal, size in enumerate(sizes, start=1):
        out.append(Subgroup(group, ordinal, tuple(machines[at:at + size])))
        at += size
    return out


def index_operations(inst: Instance, lot_step: int) -> dict[Ident, dict[OpRef, int]]:
    """Per tool group, the allocation index of every operation visiting it.

    lot_step 0 maps all of a lot's visits to a common index (the lot's rank
    among the group's visitors); lot_step 1 numbers visits consecutively in
    (lot, route position) order, so revisits get successive indexes.
    """
    if lot_step not in (0, 1):
        raise ValueError("lot_step must be 0 or 1")
    key = lot_sort_key(inst.lots)
    visits: dict[Ident, list[tuple]] = {}
    for lot in sorted(inst.lots, key=key):
        for op in inst.routes[lot.product].steps:
            visits.setdefault(op.group, []).append((lot, op.index))
    out: dict[Ident, dict[OpRef, int]] = {}
    for group, ops in visits.items():
        indexes: dict[OpRef, int] = {}
        if lot_step == 0:
            rank: dict[Ident, int] = {}
            for lot, op_index in ops:
                if lot.id not in rank:
                    rank[lot.id] = len(rank)
                indexes[OpRef(lot.id, op_index)] = rank[lot.id]
        else:
            for k, (lot, op_index) in enumerate(ops):
                indexes[OpRef(lot.id, op_index)] = k
        out[group] = indexes
    return out


def allocate_subgroups(indexes: dict[OpRef, int], subgroups: list[Subgroup]) -> dict[OpRef, Subgroup]:
    """Round-robin allocation: index k lands in subgroup (k mod count) + 1."""
    count = len(subgroups)
    by_ordinal = {sg.ordinal: sg for sg in subgroups}
    return {ref: by_ordinal[(k % count) + 1] for ref, k in indexes.items()}


def allocate_by_setup(subgroup: Subgroup, ops: Iterable[OpRef], inst: Instance) -> dict[OpRef, Ident]:
    """Pin each operation of a subgroup to one machine, one setup at a time.

    Setups are ordered by descending total processing time of their operations
    (ties by setup id), and each setup goes, with all its operations, to the
    machine with the least accumulated load so far (ties by machine position).
    Don't-care operations form one pseudo-setup.
    """
    groups: dict[object, list[OpRef]] = {}
    totals: dict[object, int] = {}
    for ref in ops:
        op = inst.lot_op(inst.lot_by_id(ref.lot), ref.index)
        key = "" if op.setup is ANY else op.setup
        groups.setdefault(key, []).append(ref)
        totals[key] = totals.get(key, 0) + op.proc_time
    load = {mach.id: 0 for mach in subgroup.machines}
    out: dict[OpRef, Ident] = {}
    setup_order = lambda k: (-totals[k], (-1, 0, "") if k == "" else ident_key(k))
    for key in sorted(totals, key=setup_order):
        target = min(load, key=lambda mid: (load[mid], ident_key(mid)))
        load[target] += totals[key]
        for ref in groups[key]:
            out[ref] = target
    return out


def build_prealloc(inst: Instance, cfg: AllocConfig) -> PreallocationMap:
    """Assignable machines per operation under the configured strategy.

    sub_size 0 keeps the whole tool group; 1 fixes one machine per operation
    via size-1 subgroups; otherwise operations may use all machines of their
    round-robin subgroup, narrowed to single machines when by_setup is set.
    """
    out: PreallocationMap = {}
    if cfg.sub_size == 0:
        for lot in inst.lots:
            for op in inst.routes[lot.product].steps:
                out[OpRef(lot.id, op.index)] = tuple(m.id for m in inst.group_machines(op.group))
        return out
    indexed = index_operations(inst, cfg.lot_step)
    for group, indexes in indexed.items():
        machines = inst.group_machines(group)
        if cfg.sub_size == 1:
            subgroups = [Subgroup(group, k + 1, (mach,)) for k, mach in enumerate(machines)]
        else:
            subgroups = partition_subgroups(machines, cfg.sub_size)
        placed = allocate_subgroups(indexes, subgroups)
        if cfg.by_setup and cfg.sub_size >= 2:
            for sg in subgroups:
                members = [ref for ref, where in placed.items() if where is sg]
                pinned = allocate_by_setup(sg, members, inst)
                for ref, mid in pinned.items():
                    out[ref] = (mid,)
        else:
            for ref, sg in placed.items():
                out[ref] = tuple(m.id for m in sg.machines)
    return out
