"""Problem data model for semiconductor fab scheduling instances.

An instance bundles production routes (one ordered sequence of operations per
product), tool groups with their interchangeable machines, setup
configurations with change times and minimum-usage requirements, periodic
maintenance specifications (triggered by processed lots or accumulated
processing time), and the wafer lots to be produced.

Instances are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Union


class _AnySetup:
    """Sentinel for the don't-care setup (encoded as 0 in fact files)."""

    _singleton = None

    def __new__(cls):
        if cls._singleton is None:
            cls._singleton = super().__new__(cls)
        return cls._singleton

    def __repr__(self):
        return "ANY"

    def __reduce__(self):
        return (_AnySetup, ())


#: Placeholder setup meaning "any positive setup may be in place".
ANY = _AnySetup()

# Identifiers are plain symbols or nonnegative integers, as they appear in
# fact files.  A SetupId may additionally be the ANY sentinel.
Ident = Union[int, str]
SetupId = Union[int, str, _AnySetup]


def ident_key(value: Ident) -> tuple:
    """Total order over mixed int/str identifiers (ints first, numerically)."""
    if isinstance(value, bool):  # bool is an int subclass; exclude explicitly
        raise TypeError("boolean is not a valid identifier")
    if isinstance(value, int):
        return (0, value, "")
    return (1, 0, str(value))


class MaintTrigger(Enum):
    """What a periodic maintenance counts: processed lots or processing time."""

    LOTS = "lots"
    TIME = "time"


@dataclass(frozen=True)
class OpSpec:
    """One production operation within a product route."""

    product: Ident
    index: int  # 1-based position in the route
    group: Ident  # tool group that must perform the operation
    proc_time: int
    min_batch: int
    max_batch: int
    setup: SetupId = ANY


@dataclass(frozen=True)
class Route:
    """Ordered operation sequence for one product (indexes 1..n)."""

    product: Ident
    steps: tuple[OpSpec, ...]

    def __len__(self) -> int:
        return len(self.steps)

    def op(self, index: int) -> OpSpec:
        return self.steps[index - 1]


@dataclass(frozen=True)
class SetupSpec:
    """A machine setup: change time and minimum production slots before the
    next change (0 means the setup can be changed freely)."""

    group: Ident
    id: Ident
    change_time: int
    min_ops: int


@dataclass(frozen=True)
class MaintenanceSpec:
    """Periodic maintenance with a hard [window_min, window_max] repetition
    window, counted in lots or in per-lot processing-time shares."""

    group: Ident
    label: Ident
    trigger: MaintTrigger
    window_min: int
    window_max: int
    duration: int


@dataclass(frozen=True)
class Machine:
    group: Ident
    id: Ident

    @property
    def key(self) -> tuple[Ident, Ident]:
        return (self.group, self.id)


@dataclass(frozen=True)
class Lot:
    id: Ident
    product: Ident


@dataclass(frozen=True)
class Instance:
    """Immutable problem description.

    ``machines`` preserves declaration order within each group (subgroup
    partitioning depends on it); ``lots`` is always sorted by lot id.
    """

    routes: dict[Ident, Route] = field(default_factory=dict)
    setups: dict[tuple[Ident, Ident], SetupSpec] = field(default_factory=dict)
    maints: dict[Ident, tuple[MaintenanceSpec, ...]] = field(default_factory=dict)
    machines: dict[Ident, tuple[Machine, ...]] = field(default_factory=dict)
    lots: tuple[Lot, ...] = ()

    def op(self, product: Ident, index: int) -> OpSpec:
        return self.routes[product].op(index)

    def lot_op(self, lot: Lot, index: int) -> OpSpec:
        return self.routes[lot.product].op(index)

    def route_len(self, product: Ident) -> int:
        return len(self.routes[product])

    def lot_by_id(self, lot_id: Ident) -> Lot:
        for lot in self.lots:
            if lot.id == lot_id:
                return lot
        raise KeyError(f"unknown lot {lot_id!r}")

    def group_machines(self, group: Ident) -> tuple[Machine, ...]:
        return self.machines.get(group, ())

    def group_maints(self, group: Ident) -> tuple[MaintenanceSpec, ...]:
        return self.maints.get(group, ())

    def setup_spec(self, group: Ident, setup: Ident) -> SetupSpec:
        return self.setups[(group, setup)]

    def all_machines(self) -> list[Machine]:
        out: list[Machine] = []
        for group in sorted(self.machines, key=ident_key):
            out.extend(self.machines[group])
        return out


def lot_sort_key(lots: Iterable[Lot]):
    """Key function realizing the total lot order used for batching.

    Numeric when every lot id is an integer, string-lexicographic otherwise.
    """
    lots = list(lots)
    if all(isinstance(lot.id, int) for lot in lots):
        return lambda lot: lot.id
    return lambda lot: str(lot.id)


def make_instance(
    routes: Iterable[Route],
    setups: Iterable[SetupSpec] = (),
    maints: Iterable[MaintenanceSpec] = (),
    machines: Iterable[Machine] = (),
    lots: Iterable[Lot] = (),
) -> Instance:
    """Assemble an Instance, normalizing lot order; no validation beyond
    duplicate keys (use validate_instance for invariant diagnostics)."""
    route_map: dict[Ident, Route] = {}
    for route in routes:
        if route.product in route_map:
            raise ValueError(f"duplicate route for product {route.product!r}")
        route_map[route.product] = route
    setup_map: dict[tuple[Ident, Ident], SetupSpec] = {}
    for spec in setups:
        key = (spec.group, spec.id)
        if key in setup_map:
            raise ValueError(f"duplicate setup {spec.id!r} for group {spec.group!r}")
        setup_map[key] = spec
    maint_map: dict[Ident, list[MaintenanceSpec]] = {}
    for spec in maints:
        if any(m.label == spec.label for m in maint_map.get(spec.group, [])):
            raise ValueError(f"duplicate maintenance {spec.label!r} for group {spec.group!r}")
        maint_map.setdefault(spec.group, []).append(spec)
    machine_map: dict[Ident, list[Machine]] = {}
    for mach in machines:
        if mach in machine_map.get(mach.group, []):
            raise ValueError(f"duplicate machine {mach.key!r}")
        machine_map.setdefault(mach.group, []).append(mach)
    lot_list = list(lots)
    seen = set()
    for lot in lot_list:
        if lot.id in seen:
            raise ValueError(f"duplicate lot {lot.id!r}")
        seen.add(lot.id)
    lot_list.sort(key=lot_sort_key(lot_list))
    return Instance(
        routes=route_map,
        setups=setup_map,
        maints={g: tuple(ms) for g, ms in maint_map.items()},
        machines={g: tuple(ms) for g, ms in machine_map.items()},
        lots=tuple(lot_list),
    )


def validate_instance(inst: Instance) -> list[str]:
    """Check all type-level invariants; returns one diagnostic per violation.

    An empty list means the instance is well formed.
    """
    diags: list[str] = []
    for product, route in inst.routes.items():
        if not route.steps:
            diags.append(f"empty route: product {product!r}")
        for pos, op in enumerate(route.steps, start=1):
            where = f"product {product!r} op {op.index}"
            if op.index != pos:
                diags.append(f"route indexes not contiguous from 1: {where}")
            if op.product != product:
                diags.append(f"op product mismatch: {where}")
            if op.proc_time < 0:
                diags.append(f"negative proc_time: {where}")
            if op.min_batch < 1:
                diags.append(f"min_batch not positive: {where}")
            if op.max_batch < 1:
                diags.append(f"max_batch not positive: {where}")
            if op.min_batch > op.max_batch:
                diags.append(f"min_batch exceeds max_batch: {where}")
            if not inst.group_machines(op.group):
                diags.append(f"no machine in tool group {op.group!r}: {where}")
            if op.setup is not ANY and (op.group, op.setup) not in inst.setups:
                diags.append(f"undeclared setup {op.setup!r}: {where}")
    for (group, sid), spec in inst.setups.items():
        where = f"setup {sid!r} of group {group!r}"
        if spec.id is ANY or spec.id == 0:
            diags.append(f"setup id must not be the don't-care value: {where}")
        if spec.change_time < 0:
            diags.append(f"negative change_time: {where}")
        if spec.min_ops < 0:
            diags.append(f"negative min_ops: {where}")
    for group, specs in inst.maints.items():
        for spec in specs:
            where = f"maintenance {spec.label!r} of group {group!r}"
            if spec.window_min < 0:
                diags.append(f"negative maintenance minimum: {where}")
            if spec.window_max < 1:
                diags.append(f"maintenance maximum not positive: {where}")
            if spec.window_min > spec.window_max:
                diags.append(f"maintenance minimum exceeds maximum: {where}")
            if spec.duration < 0:
                diags.append(f"negative maintenance duration: {where}")
    for lot in inst.lots:
        if lot.product not in inst.routes:
            diags.append(f"lot {lot.id!r} references product {lot.product!r} without a route")
    return diags


# Duration magnitudes follow the bundled demo instance: operation times 5-20,
# setup changes 18-22, maintenance operations 13-15 time units.
_GROUP_BASES = (
    "diffusion", "lithotrack", "implant", "etch", "cmp",
    "cvd", "wet_bench", "furnace", "metro", "sputter",
)


def generate_instance(
    n_lots: int,
    n_products: int,
    route_len: int,
    n_groups: int,
    machines_per_group: int,
    batch_fraction: float = 0.3,
    seed: int = 0,
) -> Instance:
    """Generate a deterministic, feasible-by-construction benchmark instance.

    Routes revisit tool groups whenever ``route_len > n_groups`` (re-entrant
    flow).  Every group gets at least one maintenance specification, with lot
    and time triggers mixed across groups; windows are sized so that
    singleton-batch schedules can always satisfy them.
    """
    if min(n_lots, n_products, route_len, n_groups, machines_per_group) < 1:
        raise ValueError("all generator counts must be positive")
    if n_products > n_lots:
        raise ValueError("more products than lots")
    if not 0.0 <= batch_fraction <= 1.0:
        raise ValueError("batch_fraction must be within [0, 1]")
    rng = random.Random(seed)

    groups = [f"{_GROUP_BASES[i % len(_GROUP_BASES)]}_{i + 1}" for i in range(n_groups)]
    machines = [Machine(g, k + 1) for g in groups for k in range(machines_per_group)]

    setups: list[SetupSpec] = []
    group_setups: dict[str, list[str]] = {}
    for gi, g in enumerate(groups):
        ids = [f"su{gi + 1}_{k + 1}" for k in range(rng.randint(2, 3))]
        group_setups[g] = ids
        for sid in ids:
            setups.append(SetupSpec(g, sid, rng.randint(18, 22), rng.randint(0, 4)))

    # Batch-capable stages model furnace/diffusion-style operations: long
    # processing, several lots at once.  All lots of a product share the
    # stage's setup, as in real routes.
    routes: list[Route] = []
    for p in range(1, n_products + 1):
        order = rng.sample(groups, n_groups)
        steps = []
        for i in range(1, route_len + 1):
            g = order[(i - 1) % n_groups]
            if rng.random() < batch_fraction:
                max_b = rng.randint(3, 4)
                min_b = rng.randint(1, 2)
                proc = rng.randint(15, 20)
            else:
                min_b = max_b = 1
                proc = rng.randint(5, 12)
            setup: SetupId = ANY if rng.random() < 0.15 else rng.choice(group_setups[g])
            steps.append(OpSpec(p, i, g, proc, min_b, max_b, setup))
        routes.append(Route(p, tuple(steps)))

    # Window sizing keeps singleton schedules feasible: a forced maintenance
    # is always insertable because window_max - window_min covers the largest
    # single contribution (1 lot, or one op's full processing time).  Lot
    # windows widen with instance size so full batches stay admissible.
    max_proc = {g: 1 for g in groups}
    for route in routes:
        for op in route.steps:
            max_proc[op.group] = max(max_proc[op.group], op.proc_time)
    lot_span_hi = 6 if n_lots >= 6 else 4
    lot_span_lo = 4 if n_lots >= 6 else 2
    maints: list[MaintenanceSpec] = []
    for gi, g in enumerate(groups):
        triggers = [MaintTrigger.LOTS if gi % 2 == 0 else MaintTrigger.TIME]
        if n_groups == 1 or rng.random() < 0.3:
            triggers.append(MaintTrigger.TIME if triggers[0] is MaintTrigger.LOTS else MaintTrigger.LOTS)
        for trigger in triggers:
            tag = "mn" if trigger is MaintTrigger.LOTS else "wk"
            if trigger is MaintTrigger.LOTS:
                low = rng.randint(0, 1)
                high = low + rng.randint(lot_span_lo, lot_span_hi)
            else:
                low = rng.randint(0, 12)
                high = low + max_proc[g] + rng.randint(0, 15)
            maints.append(MaintenanceSpec(g, f"{g}_{tag}", trigger, low, high, rng.randint(13, 15)))

    lots = [Lot(i + 1, (i % n_products) + 1) for i in range(n_lots)]
    return make_instance(routes, setups, maints, machines, lots)


def minimal_batch_load(inst: Instance, product: Ident, index: int) -> int:
    """Least total processing time any batching of (product, index) can put on
    machines: number of lots over max batch size, rounded up, times op time."""
    op = inst.op(product, index)
    n = sum(1 for lot in inst.lots if lot.product == product)
    return math.ceil(n / op.max_batch) * op.proc_time
