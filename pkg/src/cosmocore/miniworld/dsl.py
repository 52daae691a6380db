"""A closed dataframe-pipeline DSL with an execution oracle and bug mutations.

Programs are short pipelines over a primary table named ``df``::

    df.filter(id > 1).project(id, val)

Four op kinds exist: filter, project, join and aggregate. Programs that
reference unknown columns or break an op's arity are representable; they
are what the oracle reports as syntax errors.
"""

from __future__ import annotations

import operator
from collections import Counter
from dataclasses import dataclass, replace
from typing import Any, Callable, Mapping, Sequence, Union

from cosmocore.core import FeedbackKind, Rng, ValidationError

PRIMARY = "df"

Cell = Union[int, str]

COMPARATORS: dict[str, Callable[[Any, Any], bool]] = {
    ">": operator.gt,
    ">=": operator.ge,
    "<": operator.lt,
    "<=": operator.le,
    "==": operator.eq,
    "!=": operator.ne,
}
AGG_FUNCTIONS = ("count", "sum")
BUG_KINDS = ("wrong_predicate", "wrong_join_key", "wrong_aggregation", "malformed_op")

REWARD_PASS = 1.0
REWARD_SEMANTIC = -0.5
REWARD_RUNTIME = -0.5
REWARD_SYNTAX = -1.0

# neighbouring comparators used by the wrong_predicate mutation
_COMPARATOR_SWAPS = {
    ">": (">=",),
    ">=": (">",),
    "<": ("<=",),
    "<=": ("<",),
    "==": ("!=",),
    "!=": ("==",),
}


@dataclass(frozen=True)
class Table:
    columns: tuple[str, ...]
    rows: tuple[tuple[Cell, ...], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        if len(set(self.columns)) != len(self.columns):
            raise ValidationError(f"duplicate column names in {self.columns}")
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValidationError(f"row {row} does not match columns {self.columns}")
            for cell in row:
                if isinstance(cell, bool) or not isinstance(cell, (int, str)):
                    raise ValidationError(f"cell {cell!r} is not an int or str")

    def same_content(self, other: "Table") -> bool:
        """Column-ordered schema equality plus multiset row equality."""
        return self.columns == other.columns and Counter(self.rows) == Counter(other.rows)

    def to_dict(self) -> dict[str, Any]:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Table":
        return cls(tuple(data["columns"]), tuple(tuple(r) for r in data["rows"]))


@dataclass(frozen=True)
class Filter:
    column: str
    comparator: str
    literal: Cell
    kind = "filter"

    def render(self) -> str:
        return f"filter({self.column} {self.comparator} {self.literal!r})"


@dataclass(frozen=True)
class Project:
    columns: tuple[str, ...]
    kind = "project"

    def __post_init__(self) -> None:
        object.__setattr__(self, "columns", tuple(self.columns))

    def render(self) -> str:
        return f"project({', '.join(self.columns)})"


@dataclass(frozen=True)
class Join:
    other: str
    left_key: str
    right_key: str
    kind = "join"

    def render(self) -> str:
        return f"join({self.other}, {self.left_key} = {self.right_key})"


@dataclass(frozen=True)
class Aggregate:
    group_col: str
    agg_fn: str
    target_col: str
    kind = "aggregate"

    def render(self) -> str:
        return f"aggregate({self.group_col}, {self.agg_fn}({self.target_col}))"


Op = Union[Filter, Project, Join, Aggregate]
_OP_TYPES: dict[str, type] = {"filter": Filter, "project": Project, "join": Join, "aggregate": Aggregate}


@dataclass(frozen=True)
class Program:
    ops: tuple[Op, ...] = ()
    well_formed: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "ops", tuple(self.ops))

    def render(self) -> str:
        text = ".".join([PRIMARY, *(op.render() for op in self.ops)])
        return text if self.well_formed else f"{text}  # ill-formed"

    def to_dict(self) -> dict[str, Any]:
        ops = []
        for op in self.ops:
            item: dict[str, Any] = {"op": op.kind}
            for name in op.__dataclass_fields__:
                value = getattr(op, name)
                item[name] = list(value) if isinstance(value, tuple) else value
            ops.append(item)
        return {"ops": ops, "well_formed": self.well_formed}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Program":
        ops = []
        for item in data["ops"]:
            item = dict(item)
            op_type = _OP_TYPES[item.pop("op")]
            ops.append(op_type(**item))
        return cls(tuple(ops), bool(data.get("well_formed", True)))


def structural_problems(program: Program) -> list[str]:
    """Arity and vocabulary problems detectable without looking at data."""
    problems = []
    if not program.ops:
        problems.append("empty pipeline")
    for op in program.ops:
        if isinstance(op, Filter) and op.comparator not in COMPARATORS:
            problems.append(f"unknown comparator {op.comparator!r}")
        elif isinstance(op, Project) and (not op.columns or len(set(op.columns)) != len(op.columns)):
            problems.append("project needs distinct, non-empty columns")
        elif isinstance(op, Aggregate) and op.agg_fn not in AGG_FUNCTIONS:
            problems.append(f"unknown aggregate {op.agg_fn!r}")
    return problems


class _SyntaxFault(Exception):
    pass


class _RuntimeFault(Exception):
    pass


def _index(table: Table, column: str) -> int:
    try:
        return table.columns.index(column)
    except ValueError:
        raise _SyntaxFault(f"unknown column {column!r}") from None


def _apply(op: Op, table: Table, tables: Mapping[str, Table]) -> Table:
    if isinstance(op, Filter):
        i = _index(table, op.column)
        cmp = COMPARATORS[op.comparator]
        kept = []
        for row in table.rows:
            try:
                if cmp(row[i], op.literal):
                    kept.append(row)
            except TypeError as exc:
                raise _RuntimeFault(f"cannot compare {row[i]!r} {op.comparator} {op.literal!r}") from exc
        return Table(table.columns, tuple(kept))
    if isinstance(op, Project):
        idx = [_index(table, c) for c in op.columns]
        return Table(op.columns, tuple(tuple(row[i] for i in idx) for row in table.rows))
    if isinstance(op, Join):
        if op.other not in tables:
            raise _SyntaxFault(f"unknown table {op.other!r}")
        right = tables[op.other]
        li = _index(table, op.left_key)
        ri = _index(right, op.right_key)
        keep = [j for j in range(len(right.columns)) if j != ri]
        names = []
        for j in keep:
            name = right.columns[j]
            names.append(f"{op.other}_{name}" if name in table.columns else name)
        by_key: dict[Cell, list[tuple[Cell, ...]]] = {}
        for rrow in right.rows:
            by_key.setdefault(rrow[ri], []).append(rrow)
        rows = []
        for lrow in table.rows:
            for rrow in by_key.get(lrow[li], ()):
                rows.append(lrow + tuple(rrow[j] for j in keep))
        return Table(table.columns + tuple(names), tuple(rows))
    if isinstance(op, Aggregate):
        gi = _index(table, op.group_col)
        ti = _index(table, op.target_col)
        groups: dict[Cell, int] = {}
        for row in table.rows:
            key = row[gi]
            if op.agg_fn == "count":
                groups[key] = groups.get(key, 0) + 1
            else:
                value = row[ti]
                if not isinstance(value, int):
                    raise _RuntimeFault(f"cannot sum non-integer value {value!r}")
                groups[key] = groups.get(key, 0) + value
        out_name = "count" if op.agg_fn == "count" else f"sum_{op.target_col}"
        if out_name == op.group_col:
            raise _SyntaxFault(f"aggregate output {out_name!r} collides with group column")
        ordered = sorted(groups.items(), key=lambda kv: (type(kv[0]).__name__, kv[0]))
        return Table((op.group_col, out_name), tuple((k, v) for k, v in ordered))
    raise _SyntaxFault(f"unknown op {op!r}")


def run_program(program: Program, tables: Mapping[str, Table]) -> Table:
    """Evaluate ``program``; raises on syntax or runtime faults."""
    if not program.well_formed:
        raise _SyntaxFault("program flagged ill-formed")
    problems = structural_problems(program)
    if problems:
        raise _SyntaxFault("; ".join(problems))
    if PRIMARY not in tables:
        raise ValidationError(f"tables must include the primary table {PRIMARY!r}")
    table = tables[PRIMARY]
    for op in program.ops:
        table = _apply(op, table, tables)
    return table


@dataclass(frozen=True)
class ExecutionResult:
    feedback: FeedbackKind
    reward: float
    output: Table | None = None
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.feedback is FeedbackKind.PASS


def execute(program: Program, tables: Mapping[str, Table], expected: Table) -> ExecutionResult:
    """Run ``program`` and grade it against the hidden test ``expected``.

    Rewards are +1 for an exact (row-order insensitive) match, -0.5 for a
    wrong result or a runtime fault, and -1 for syntax errors.
    """
    try:
        output = run_program(program, tables)
    except _SyntaxFault as exc:
        return ExecutionResult(FeedbackKind.SYNTAX_ERROR, REWARD_SYNTAX, None, str(exc))
    except _RuntimeFault as exc:
        return ExecutionResult(FeedbackKind.RUNTIME_ERROR, REWARD_RUNTIME, None, str(exc))
    if output.same_content(expected):
        return ExecutionResult(FeedbackKind.PASS, REWARD_PASS, output, "")
    return ExecutionResult(FeedbackKind.SEMANTIC_ERROR, REWARD_SEMANTIC, output, "output differs from expected")


# -- mutation ---------------------------------------------------------------


def _schemas_along(program: Program, schemas: Mapping[str, Sequence[str]]) -> list[tuple[str, ...]]:
    """Static column lists seen *before* each op (best effort, no data needed)."""
    cols = tuple(schemas.get(PRIMARY, ()))
    seen = []
    for op in program.ops:
        seen.append(cols)
        if isinstance(op, Project):
            cols = op.columns
        elif isinstance(op, Join):
            right = tuple(schemas.get(op.other, ()))
            extra = tuple(
                f"{op.other}_{c}" if c in cols else c for c in right if c != op.right_key
            )
            cols = cols + extra
        elif isinstance(op, Aggregate):
            cols = (op.group_col, "count" if op.agg_fn == "count" else f"sum_{op.target_col}")
    return seen


def _replace_op(program: Program, i: int, new_op: Op, well_formed: bool = True) -> Program:
    ops = list(program.ops)
    ops[i] = new_op
    return Program(tuple(ops), well_formed)


def mutation_space(
    reference: Program, bug_kind: str, schemas: Mapping[str, Sequence[str]] | None = None
) -> list[Program]:
    """Every program ``mutate`` may return, in a fixed order.

    ``schemas`` (table name -> columns) widens the join/aggregation spaces
    with alternative columns; without it only schema-free edits are listed.
    """
    if bug_kind not in BUG_KINDS:
        raise ValidationError(f"unknown bug kind {bug_kind!r}")
    before = _schemas_along(reference, schemas) if schemas else [()] * len(reference.ops)
    out: list[Program] = []
    for i, op in enumerate(reference.ops):
        if bug_kind == "wrong_predicate" and isinstance(op, Filter):
            if isinstance(op.literal, int):
                out.append(_replace_op(reference, i, replace(op, literal=op.literal - 1)))
                out.append(_replace_op(reference, i, replace(op, literal=op.literal + 1)))
            for cmp in _COMPARATOR_SWAPS.get(op.comparator, ()):
                out.append(_replace_op(reference, i, replace(op, comparator=cmp)))
        elif bug_kind == "wrong_join_key" and isinstance(op, Join):
            if op.left_key != op.right_key:
                out.append(_replace_op(reference, i, Join(op.other, op.right_key, op.left_key)))
            for col in before[i]:
                if col != op.left_key:
                    out.append(_replace_op(reference, i, replace(op, left_key=col)))
            if schemas:
                for col in schemas.get(op.other, ()):
                    if col != op.right_key:
                        out.append(_replace_op(reference, i, replace(op, right_key=col)))
        elif bug_kind == "wrong_aggregation" and isinstance(op, Aggregate):
            for fn in AGG_FUNCTIONS:
                if fn != op.agg_fn:
                    out.append(_replace_op(reference, i, replace(op, agg_fn=fn)))
            for col in before[i]:
                if col not in (op.target_col, op.group_col):
                    out.append(_replace_op(reference, i, replace(op, target_col=col)))
                    out.append(_replace_op(reference, i, replace(op, group_col=col)))
        elif bug_kind == "malformed_op":
            out.extend(_replace_op(reference, i, bad, well_formed=False) for bad in _malformed_variants(op))
    unique: list[Program] = []
    for prog in out:
        if prog != reference and prog not in unique:
            unique.append(prog)
    return unique


def _malformed_variants(op: Op) -> list[Op]:
    if isinstance(op, Filter):
        return [replace(op, column=op.column + "_"), replace(op, comparator="=>")]
    if isinstance(op, Project):
        return [Project(()), Project(op.columns + (op.columns[0] + "_",))] if op.columns else [Project(("_",))]
    if isinstance(op, Join):
        return [replace(op, left_key=op.left_key + "_")]
    return [replace(op, agg_fn="total"), replace(op, group_col=op.group_col + "_")]


def mutate(
    reference: Program, bug_kind: str, rng: Rng, schemas: Mapping[str, Sequence[str]] | None = None
) -> Program:
    """Inject one bug of ``bug_kind`` into ``reference``.

    Raises:
        ValidationError: if the program has no op the bug kind applies to.
    """
    space = mutation_space(reference, bug_kind, schemas)
    if not space:
        raise ValidationError(f"bug kind {bug_kind!r} does not apply to {reference.render()}")
    return space[int(rng.integers(len(space)))]


def applicable_bug_kinds(program: Program) -> list[str]:
    return [k for k in BUG_KINDS if mutation_space(program, k)]


__all__ = [
    "AGG_FUNCTIONS",
    "BUG_KINDS",
    "COMPARATORS",
    "PRIMARY",
    "Aggregate",
    "ExecutionResult",
    "Filter",
    "Join",
    "Op",
    "Program",
    "Project",
    "Table",
    "applicable_bug_kinds",
    "execute",
    "mutate",
    "mutation_space",
    "run_program",
    "structural_problems",
]
