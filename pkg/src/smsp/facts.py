"""Reader and writer for the fact-format instance files.

The accepted grammar is the plain-fact subset used by the instance files:
five predicates (``route/7``, ``setup/4``, ``pm/6``, ``tool/2``, ``lot/2``),
each fact terminated by a dot, arguments being unquoted symbols matching
``[a-z][A-Za-z0-9_]*`` or nonnegative decimal integers, with ``%`` comments
running to end of line.  Anything else (variables, rules, quoted strings) is
rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .instance import (
    ANY,
    Ident,
    Instance,
    Lot,
    Machine,
    MaintTrigger,
    MaintenanceSpec,
    OpSpec,
    Route,
    SetupId,
    SetupSpec,
    ident_key,
    make_instance,
)


class FactsError(Exception):
    """Problem in a fact file.  ``kind`` is one of: syntax, arity, type,
    dangling, duplicate, structure."""

    def __init__(self, kind: str, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {message}" if line else message)
        self.kind = kind
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>%[^\n]*)
  | (?P<int>[0-9]+)
  | (?P<sym>[a-z][A-Za-z0-9_]*)
  | (?P<punct>[(),.])
    """,
    re.VERBOSE,
)

_ARITY = {"route": 7, "setup": 4, "pm": 6, "tool": 2, "lot": 2}


@dataclass
class _Tok:
    kind: str  # "int" | "sym" | "(" | ")" | "," | "."
    value: Ident
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    tokens: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FactsError("syntax", f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        col = pos - line_start + 1
        if m.lastgroup == "int":
            tokens.append(_Tok("int", int(m.group()), line, col))
        elif m.lastgroup == "sym":
            tokens.append(_Tok("sym", m.group(), line, col))
        elif m.lastgroup == "punct":
            tokens.append(_Tok(m.group(), m.group(), line, col))
        if m.lastgroup in ("ws", "comment"):
            chunk = m.group()
            n = chunk.count("\n")
            if n:
                line += n
                line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    return tokens


def _read_facts(text: str) -> list[tuple[str, list[_Tok], int, int]]:
    """Split the token stream into (predicate, argument tokens, line, col)."""
    tokens = _tokenize(text)
    facts = []
    i = 0
    while i < len(tokens):
        head = tokens[i]
        if head.kind != "sym":
            raise FactsError("syntax", f"expected predicate name, got {head.value!r}", head.line, head.col)
        if head.value not in _ARITY:
            raise FactsError("syntax", f"unknown predicate {head.value!r}", head.line, head.col)
        i += 1
        if i >= len(tokens) or tokens[i].kind != "(":
            raise FactsError("syntax", f"expected '(' after {head.value!r}", head.line, head.col)
        i += 1
        args: list[_Tok] = []
        while True:
            if i >= len(tokens):
                raise FactsError("syntax", "unterminated fact", head.line, head.col)
            tok = tokens[i]
            if tok.kind not in ("int", "sym"):
                raise FactsError("syntax", f"expected argument, got {tok.value!r}", tok.line, tok.col)
            args.append(tok)
            i += 1
            if i >= len(tokens):
                raise FactsError("syntax", "unterminated fact", head.line, head.col)
            if tokens[i].kind == ",":
                i += 1
                continue
            if tokens[i].kind == ")":
                i += 1
                break
            raise FactsError("syntax", f"expected ',' or ')', got {tokens[i].value!r}",
                             tokens[i].line, tokens[i].col)
        if i >= len(tokens) or tokens[i].kind != ".":
            where = tokens[i] if i < len(tokens) else head
            raise FactsError("syntax", "expected '.' after fact", where.line, where.col)
        i += 1
        if len(args) != _ARITY[head.value]:
            raise FactsError("arity", f"{head.value}/{_ARITY[head.value]} takes "
                             f"{_ARITY[head.value]} arguments, got {len(args)}", head.line, head.col)
        facts.append((head.value, args, head.line, head.col))
    return facts


def _want_int(tok: _Tok, what: str, minimum: int = 0) -> int:
    if tok.kind != "int" or tok.value < minimum:
        raise FactsError("type", f"{what} must be an integer >= {minimum}", tok.line, tok.col)
    return tok.value


def parse_facts(text: str) -> Instance:
    """Parse fact-format text into an Instance.

    Setup argument 0 in route facts maps to ANY; machine order within a group
    follows declaration order; lots are sorted by id.
    """
    routes_raw: dict[Ident, dict[int, OpSpec]] = {}
    setups: dict[tuple[Ident, Ident], SetupSpec] = {}
    maints: dict[Ident, list[MaintenanceSpec]] = {}
    machines: dict[Ident, list[Machine]] = {}
    lots: dict[Ident, Lot] = {}

    for pred, args, line, col in _read_facts(text):
        if pred == "route":
            p, i, g, t, mn, mx, s = args
            if g.kind != "sym":
                raise FactsError("type", "tool group must be a symbol", g.line, g.col)
            index = _want_int(i, "route position", 1)
            setup: SetupId = ANY if (s.kind == "int" and s.value == 0) else s.value
            op = OpSpec(p.value, index, g.value, _want_int(t, "processing time"),
                        _want_int(mn, "min batch size", 1), _want_int(mx, "max batch size", 1),
                        setup)
            steps = routes_raw.setdefault(p.value, {})
            if index in steps:
                raise FactsError("duplicate", f"duplicate route fact for product {p.value!r} position {index}",
                                 line, col)
            steps[index] = op
        elif pred == "setup":
            g, s, t, m = args
            if g.kind != "sym":
                raise FactsError("type", "tool group must be a symbol", g.line, g.col)
            if s.kind == "int" and s.value == 0:
                raise FactsError("type", "setup 0 is reserved for don't-care and cannot be declared",
                                 s.line, s.col)
            key = (g.value, s.value)
            if key in setups:
                raise FactsError("duplicate", f"duplicate setup {s.value!r} for group {g.value!r}", line, col)
            setups[key] = SetupSpec(g.value, s.value, _want_int(t, "setup change time"),
                                    _want_int(m, "setup minimum operations"))
        elif pred == "pm":
            g, label, e, mn, mx, t = args
            if g.kind != "sym":
                raise FactsError("type", "tool group must be a symbol", g.line, g.col)
            if e.kind != "sym" or e.value not in ("lots", "time"):
                raise FactsError("type", "maintenance type must be 'lots' or 'time'", e.line, e.col)
            if any(spec.label == label.value for spec in maints.get(g.value, [])):
                raise FactsError("duplicate", f"duplicate maintenance {label.value!r} for group {g.value!r}",
                                 line, col)
            maints.setdefault(g.value, []).append(MaintenanceSpec(
                g.value, label.value, MaintTrigger(e.value),
                _want_int(mn, "maintenance minimum"), _want_int(mx, "maintenance maximum", 1),
                _want_int(t, "maintenance duration")))
        elif pred == "tool":
            g, mid = args
            if g.kind != "sym":
                raise FactsError("type", "tool group must be a symbol", g.line, g.col)
            mach = Machine(g.value, mid.value)
            if mach in machines.get(g.value, []):
                raise FactsError("duplicate", f"duplicate machine {mid.value!r} in group {g.value!r}", line, col)
            machines.setdefault(g.value, []).append(mach)
        else:  # lot
            lid, p = args
            if lid.value in lots:
                raise FactsError("duplicate", f"duplicate lot {lid.value!r}", line, col)
            lots[lid.value] = Lot(lid.value, p.value)

    routes: list[Route] = []
    for product, steps in routes_raw.items():
        n = len(steps)
        for index in range(1, n + 1):
            if index not in steps:
                raise FactsError("structure",
                                 f"route for product {product!r} misses position {index} (has {n} facts)")
        ordered = tuple(steps[i] for i in range(1, n + 1))
        routes.append(Route(product, ordered))

    # Referential checks: operations need machines and declared setups, lots
    # need routed products.
    for route in routes:
        for op in route.steps:
            if op.group not in machines:
                raise FactsError("dangling",
                                 f"route for product {op.product!r} names tool group {op.group!r} "
                                 "with no machine")
            if op.setup is not ANY and (op.group, op.setup) not in setups:
                raise FactsError("dangling",
                                 f"operation {op.index} of product {op.product!r} requires "
                                 f"undeclared setup {op.setup!r}")
    route_products = {route.product for route in routes}
    for lot in lots.values():
        if lot.product not in route_products:
            raise FactsError("dangling", f"lot {lot.id!r} names product {lot.product!r} with no route")

    return make_instance(routes, setups.values(),
                         [m for g in maints for m in maints[g]],
                         [m for g in machines for m in machines[g]],
                         lots.values())


def _term(value) -> str:
    if value is ANY:
        return "0"
    return str(value)


def serialize_facts(inst: Instance) -> str:
    """Emit an instance as deterministic fact-format text.

    Facts are grouped by predicate (route, setup, pm, tool, lot) and sorted by
    their key arguments; machine and maintenance declaration order within a
    group is preserved, since it is meaningful.
    """
    lines: list[str] = []
    for product in sorted(inst.routes, key=ident_key):
        for op in inst.routes[product].steps:
            lines.append(f"route({_term(product)},{op.index},{_term(op.group)},{op.proc_time},"
                         f"{op.min_batch},{op.max_batch},{_term(op.setup)}).")
    for group, sid in sorted(inst.setups, key=lambda k: (ident_key(k[0]), ident_key(k[1]))):
        spec = inst.setups[(group, sid)]
        lines.append(f"setup({_term(group)},{_term(sid)},{spec.change_time},{spec.min_ops}).")
    for group in sorted(inst.maints, key=ident_key):
        for spec in inst.maints[group]:
            lines.append(f"pm({_term(group)},{_term(spec.label)},{spec.trigger.value},"
                         f"{spec.window_min},{spec.window_max},{spec.duration}).")
    for group in sorted(inst.machines, key=ident_key):
        for mach in inst.machines[group]:
            lines.append(f"tool({_term(group)},{_term(mach.id)}).")
    for lot in inst.lots:
        lines.append(f"lot({_term(lot.id)},{_term(lot.product)}).")
    return "\n".join(lines) + ("\n" if lines else "")
