"""Seeded task corpus stored as JSON fixtures, plus per-task candidate programs."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from cosmocore.core import FeedbackKind, Rng, ValidationError, make_rng
from cosmocore.miniworld.dsl import (
    BUG_KINDS,
    PRIMARY,
    Aggregate,
    Filter,
    Join,
    Program,
    Project,
    Table,
    execute,
    mutation_space,
    run_program,
)

CORPUS_VERSION = 1
DEFAULT_CORPUS_SEED = 2024
DEFAULT_CORPUS_SIZE = 24


@dataclass(frozen=True)
class TaskSpec:
    id: str
    prompt: str
    tables: Mapping[str, Table]
    reference: Program
    expected: Table

    def schemas(self) -> dict[str, tuple[str, ...]]:
        return {name: t.columns for name, t in self.tables.items()}

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "prompt": self.prompt,
            "tables": {name: t.to_dict() for name, t in self.tables.items()},
            "reference": self.reference.to_dict(),
            "expected": self.expected.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TaskSpec":
        return cls(
            id=data["id"],
            prompt=data["prompt"],
            tables={name: Table.from_dict(t) for name, t in data["tables"].items()},
            reference=Program.from_dict(data["reference"]),
            expected=Table.from_dict(data["expected"]),
        )


EMPLOYEES = Table(
    ("id", "name", "dept_id", "salary", "level"),
    (
        (1, "ana", 10, 3200, 1),
        (2, "bo", 20, 4100, 2),
        (3, "cy", 10, 5200, 3),
        (4, "dee", 30, 2800, 1),
        (5, "eli", 20, 6100, 3),
        (6, "fay", 30, 3900, 2),
        (7, "gus", 10, 4500, 2),
        (8, "hal", 40, 3000, 1),
    ),
)
DEPTS = Table(
    ("dept_key", "dept_name", "city"),
    ((10, "eng", "paris"), (20, "ops", "berlin"), (30, "sales", "paris"), (40, "hr", "rome")),
)
ORDERS = Table(
    ("order_id", "emp_id", "amount", "status"),
    (
        (100, 1, 250, "open"),
        (101, 2, 120, "closed"),
        (102, 1, 90, "open"),
        (103, 3, 400, "open"),
        (104, 5, 60, "closed"),
        (105, 6, 310, "open"),
        (106, 7, 75, "closed"),
        (107, 3, 150, "open"),
    ),
)
TOY = Table(("id", "val"), ((1, "a"), (2, "b")))


def _pick(rng: Rng, values: Sequence[Any]) -> Any:
    return values[int(rng.integers(len(values)))]


def _column(table: Table, name: str) -> list[Any]:
    i = table.columns.index(name)
    return sorted({row[i] for row in table.rows})


# Each template returns (prompt, tables, reference program).
Template = Callable[[Rng], tuple[str, dict[str, Table], Program]]


def _t_toy_filter(rng: Rng):
    return "Write a filter keeping rows with id > 1", {PRIMARY: TOY}, Program((Filter("id", ">", 1),))


def _t_salary_filter(rng: Rng):
    x = _pick(rng, _column(EMPLOYEES, "salary")[1:-1])
    cmp = _pick(rng, (">", ">="))
    prog = Program((Filter("salary", cmp, x), Project(("name",))))
    return f"List names of employees with salary {cmp} {x}", {PRIMARY: EMPLOYEES}, prog


def _t_level_filter(rng: Rng):
    lvl = _pick(rng, _column(EMPLOYEES, "level"))
    prog = Program((Filter("level", "==", lvl), Project(("name", "salary"))))
    return f"Show name and salary for level {lvl} staff", {PRIMARY: EMPLOYEES}, prog


def _t_dept_exclude(rng: Rng):
    d = _pick(rng, _column(EMPLOYEES, "dept_id"))
    prog = Program((Filter("dept_id", "!=", d), Project(("id", "name"))))
    return f"Return id and name of employees outside department {d}", {PRIMARY: EMPLOYEES}, prog


def _t_join_city(rng: Rng):
    prog = Program((Join("depts", "dept_id", "dept_key"), Project(("name", "city"))))
    return "Join employees to departments and list each name with its city", {PRIMARY: EMPLOYEES, "depts": DEPTS}, prog


def _t_join_filter_city(rng: Rng):
    city = _pick(rng, _column(DEPTS, "city"))
    prog = Program((Join("depts", "dept_id", "dept_key"), Filter("city", "==", city), Project(("name",))))
    return f"Names of employees working in {city}", {PRIMARY: EMPLOYEES, "depts": DEPTS}, prog


def _t_count_by_dept(rng: Rng):
    prog = Program((Aggregate("dept_id", "count", "id"),))
    return "Count employees per department", {PRIMARY: EMPLOYEES}, prog


def _t_payroll_by_dept(rng: Rng):
    prog = Program((Aggregate("dept_id", "sum", "salary"),))
    return "Total salary per department", {PRIMARY: EMPLOYEES}, prog


def _t_filter_count(rng: Rng):
    x = _pick(rng, _column(EMPLOYEES, "salary")[1:-2])
    prog = Program((Filter("salary", ">=", x), Aggregate("dept_id", "count", "id")))
    return f"Per department, count employees earning at least {x}", {PRIMARY: EMPLOYEES}, prog


def _t_join_payroll_city(rng: Rng):
    prog = Program((Join("depts", "dept_id", "dept_key"), Aggregate("city", "sum", "salary")))
    return "Total salary per city after joining departments", {PRIMARY: EMPLOYEES, "depts": DEPTS}, prog


def _t_open_amounts(rng: Rng):
    status = _pick(rng, ("open", "closed"))
    prog = Program((Filter("status", "==", status), Aggregate("emp_id", "sum", "amount")))
    return f"Sum {status} order amounts per employee", {PRIMARY: ORDERS}, prog


def _t_order_names(rng: Rng):
    prog = Program((Join("employees", "emp_id", "id"), Project(("order_id", "name"))))
    return "Attach the employee name to every order", {PRIMARY: ORDERS, "employees": EMPLOYEES}, prog


def _t_big_orders(rng: Rng):
    x = _pick(rng, _column(ORDERS, "amount")[1:-1])
    prog = Program((Filter("amount", ">", x), Project(("order_id",))))
    return f"Order ids with amount above {x}", {PRIMARY: ORDERS}, prog


def _t_orders_by_dept(rng: Rng):
    prog = Program((Join("employees", "emp_id", "id"), Aggregate("dept_id", "sum", "amount")))
    return "Order volume per department of the selling employee", {PRIMARY: ORDERS, "employees": EMPLOYEES}, prog


TEMPLATES: tuple[Template, ...] = (
    _t_toy_filter,
    _t_salary_filter,
    _t_level_filter,
    _t_dept_exclude,
    _t_join_city,
    _t_join_filter_city,
    _t_count_by_dept,
    _t_payroll_by_dept,
    _t_filter_count,
    _t_join_payroll_city,
    _t_open_amounts,
    _t_order_names,
    _t_big_orders,
    _t_orders_by_dept,
)


def generate_corpus(seed: int = DEFAULT_CORPUS_SEED, n_tasks: int = DEFAULT_CORPUS_SIZE) -> list[TaskSpec]:
    """Deterministically generate ``n_tasks`` distinct tasks.

    Every template is used once before any repeats; repeats draw fresh
    literals and are skipped when they duplicate an earlier task.
    """
    rng = make_rng(seed)
    tasks: list[TaskSpec] = []
    seen: set[tuple[str, Program]] = set()
    attempts = 0
    while len(tasks) < n_tasks:
        attempts += 1
        if attempts > 50 * n_tasks:
            raise ValidationError(f"could not generate {n_tasks} distinct tasks")
        template = TEMPLATES[(attempts - 1) % len(TEMPLATES)]
        prompt, tables, reference = template(rng)
        key = (prompt, reference)
        if key in seen:
            continue
        seen.add(key)
        expected = run_program(reference, tables)
        tasks.append(TaskSpec(f"task-{len(tasks):02d}", prompt, tables, reference, expected))
    return tasks


def corpus_to_json(tasks: Sequence[TaskSpec], seed: int | None = None) -> str:
    payload = {"version": CORPUS_VERSION, "seed": seed, "tasks": [t.to_dict() for t in tasks]}
    return json.dumps(payload, indent=1)


def load_corpus(path: str | Path | None = None) -> list[TaskSpec]:
    """Load a corpus fixture; ``None`` loads the corpus shipped with the package."""
    if path is None:
        text = resources.files("cosmocore.data").joinpath("corpus.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    payload = json.loads(text)
    if payload.get("version") != CORPUS_VERSION:
        raise ValidationError(f"unsupported corpus version {payload.get('version')!r}")
    return [TaskSpec.from_dict(t) for t in payload["tasks"]]


def validate_corpus(tasks: Sequence[TaskSpec]) -> list[str]:
    """Re-execute every reference program against its hidden test.

    Also checks that task ids are unique and that the corpus covers all op
    kinds and all bug kinds. Returns a list of problems (empty when valid).
    """
    problems = []
    ids = [t.id for t in tasks]
    if len(set(ids)) != len(ids):
        problems.append("duplicate task ids")
    op_kinds: set[str] = set()
    bug_kinds: set[str] = set()
    for task in tasks:
        result = execute(task.reference, task.tables, task.expected)
        if result.feedback is not FeedbackKind.PASS:
            problems.append(f"{task.id}: reference fails its hidden test ({result.feedback.value}: {result.detail})")
        op_kinds.update(op.kind for op in task.reference.ops)
        bug_kinds.update(k for k in BUG_KINDS if mutation_space(task.reference, k, task.schemas()))
    for kind in ("filter", "project", "join", "aggregate"):
        if kind not in op_kinds:
            problems.append(f"corpus has no {kind} task")
    for kind in BUG_KINDS:
        if kind not in bug_kinds:
            problems.append(f"corpus has no task admitting {kind}")
    return problems


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def build_candidates(task: TaskSpec, per_kind: int = 1, seed: int = 0) -> list[Program]:
    """Reference program followed by failing mutants, ``per_kind`` per bug kind.

    Mutants that happen to pass the hidden test are discarded. The choice
    depends only on (task id, seed).
    """
    rng = make_rng(_stable_hash(f"{task.id}:{seed}"))
    schemas = task.schemas()
    out = [task.reference]
    for kind in BUG_KINDS:
        space = [
            p
            for p in mutation_space(task.reference, kind, schemas)
            if not execute(p, task.tables, task.expected).passed and p not in out
        ]
        if not space:
            continue
        order = rng.permutation(len(space))
        out.extend(space[i] for i in order[:per_kind])
    return out
