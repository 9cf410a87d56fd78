"""Parametric plan files: parsing, cross-product expansion, substitution.

The plan grammar is line oriented. ``#`` starts a comment outside quotes.

    parameter <name> [<label>] range from <lo> to <hi> step <s>
    parameter <name> [<label>] select anyof <v1> <v2> ...
    parameter <name> [<label>] single <value>
    task main
        copy <src> <dst>          # staging directive, recorded, no-op in sim
        execute <command template>
    endtask

Templates may use ``$name`` for any declared parameter; ``$$`` is a
literal dollar sign.
"""

from __future__ import annotations

import itertools
import math
import re
import shlex
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence, Union

Value = Union[int, float, str]

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_PLACEHOLDER_RE = re.compile(r"\$(\$|[A-Za-z_][A-Za-z0-9_]*)")


class PlanError(Exception):
    """Base for plan problems."""


class PlanSyntaxError(PlanError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DuplicateParameter(PlanError):
    pass


class UndeclaredParameter(PlanError):
    pass


class MissingBinding(PlanError):
    pass


class EmptyDomain(PlanError):
    pass


@dataclass(frozen=True)
class Range:
    lo: float
    hi: float
    step: float
    integral: bool  # all three bounds were written as integers

    def values(self) -> list[Value]:
        if self.integral:
            lo, hi, step = int(self.lo), int(self.hi), int(self.step)
            return list(range(lo, hi + 1, step))
        # count via epsilon so 0.1..0.3 step 0.1 yields 3, not 2
        count = math.floor((self.hi - self.lo) / self.step + 1e-9) + 1
        return [round(self.lo + i * self.step, 10) for i in range(count)]


@dataclass(frozen=True)
class Select:
    options: tuple[Value, ...]

    def values(self) -> list[Value]:
        return list(self.options)


@dataclass(frozen=True)
class Single:
    value: Value

    def values(self) -> list[Value]:
        return [self.value]


Domain = Union[Range, Select, Single]


@dataclass(frozen=True)
class ParameterDef:
    name: str
    domain: Domain
    label: Optional[str] = None

    def values(self) -> list[Value]:
        vals = self.domain.values()
        if not vals:
            raise EmptyDomain(self.name)
        return vals


@dataclass(frozen=True)
class TaskDef:
    name: str
    staging: tuple[tuple[str, ...], ...]
    execute: str


@dataclass(frozen=True)
class PlanModel:
    parameters: tuple[ParameterDef, ...]
    task: TaskDef

    def cardinality(self) -> int:
        n = 1
        for p in self.parameters:
            n *= len(p.values())
        return n


@dataclass(frozen=True)
class JobSpec:
    id: str
    binding: Mapping[str, Value]
    command: str
    nominal_cpu_seconds: Optional[int] = None

    def as_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "binding": dict(self.binding),
            "command": self.command,
            "nominal_cpu_seconds": self.nominal_cpu_seconds,
        }


def canonical_text(value: Value) -> str:
    """Stable text form: integer-valued numbers render without a decimal."""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if value == int(value) and abs(value) < 1e15:
            return str(int(value))
        return repr(value)
    return str(value)


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


def _parse_number(token: str, line_no: int) -> tuple[float, bool]:
    try:
        return float(int(token)), True
    except ValueError:
        pass
    try:
        return float(token), False
    except ValueError:
        raise PlanSyntaxError(line_no, f"expected a number, got {token!r}") from None


def _coerce(token: str) -> Value:
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        return token


def _parse_parameter(tokens: list[str], line_no: int) -> ParameterDef:
    if len(tokens) < 3:
        raise PlanSyntaxError(line_no, "parameter needs a name and a domain")
    name = tokens[1]
    if not _NAME_RE.fullmatch(name):
        raise PlanSyntaxError(line_no, f"bad parameter name {name!r}")
    rest = tokens[2:]
    label = None
    if rest[0] not in ("range", "select", "single"):
        label = rest[0]
        rest = rest[1:]
        if not rest:
            raise PlanSyntaxError(line_no, "parameter needs a domain after label")
    kind, args = rest[0], rest[1:]
    if kind == "range":
        # range from <lo> to <hi> step <s>
        if len(args) != 6 or args[0] != "from" or args[2] != "to" or args[4] != "step":
            raise PlanSyntaxError(line_no, "expected: range from <lo> to <hi> step <s>")
        lo, lo_int = _parse_number(args[1], line_no)
        hi, hi_int = _parse_number(args[3], line_no)
        step, step_int = _parse_number(args[5], line_no)
        if step <= 0:
            raise PlanSyntaxError(line_no, "range step must be > 0")
        if lo > hi:
            raise PlanSyntaxError(line_no, "range needs lo <= hi")
        return ParameterDef(name, Range(lo, hi, step, lo_int and hi_int and step_int), label)
    if kind == "select":
        if not args or args[0] != "anyof" or len(args) < 2:
            raise PlanSyntaxError(line_no, "expected: select anyof <v1> <v2> ...")
        return ParameterDef(name, Select(tuple(_coerce(a) for a in args[1:])), label)
    if kind == "single":
        if len(args) != 1:
            raise PlanSyntaxError(line_no, "expected: single <value>")
        return ParameterDef(name, Single(_coerce(args[0])), label)
    raise PlanSyntaxError(line_no, f"unknown domain kind {kind!r}")


def placeholders(template: str) -> list[str]:
    return [m.group(1) for m in _PLACEHOLDER_RE.finditer(template) if m.group(1) != "$"]


def parse_plan(text: str) -> PlanModel:
    params: list[ParameterDef] = []
    seen: set[str] = set()
    task_name: Optional[str] = None
    staging: list[tuple[str, ...]] = []
    execute: Optional[str] = None
    task_done = False
    in_task = False

    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = _strip_comment(raw).strip()
        if not stripped:
            continue
        try:
            tokens = shlex.split(stripped)
        except ValueError as exc:
            raise PlanSyntaxError(line_no, str(exc)) from None
        if not tokens:
            continue
        head = tokens[0]

        if not in_task:
            if head == "parameter":
                if task_done:
                    raise PlanSyntaxError(line_no, "parameters must precede the task")
                p = _parse_parameter(tokens, line_no)
                if p.name in seen:
                    raise DuplicateParameter(p.name)
                seen.add(p.name)
                params.append(p)
            elif head == "task":
                if task_done:
                    raise PlanSyntaxError(line_no, "only one task block allowed")
                if len(tokens) != 2:
                    raise PlanSyntaxError(line_no, "expected: task <name>")
                task_name = tokens[1]
                in_task = True
            else:
                raise PlanSyntaxError(line_no, f"unexpected directive {head!r}")
            continue

        # inside the task block
        if head == "endtask":
            if execute is None:
                raise PlanSyntaxError(line_no, "task block has no execute line")
            in_task = False
            task_done = True
        elif head == "execute":
            if execute is not None:
                raise PlanSyntaxError(line_no, "task block has two execute lines")
            template = _strip_comment(raw).strip()[len("execute"):].strip()
            if not template:
                raise PlanSyntaxError(line_no, "execute needs a command template")
            execute = template
        elif head == "copy":
            if len(tokens) < 3:
                raise PlanSyntaxError(line_no, "expected: copy <src> <dst>")
            staging.append(tuple(tokens[1:]))
        else:
            raise PlanSyntaxError(line_no, f"unexpected directive {head!r} in task")

    if in_task:
        raise PlanSyntaxError(len(text.splitlines()), "task block not closed with endtask")
    if not task_done or task_name is None or execute is None:
        raise PlanSyntaxError(len(text.splitlines()) or 1, "plan has no task block")

    declared = {p.name for p in params}
    for ref in placeholders(execute):
        if ref not in declared:
            raise UndeclaredParameter(ref)

    return PlanModel(tuple(params), TaskDef(task_name, tuple(staging), execute))


def substitute(template: str, binding: Mapping[str, Value]) -> str:
    def repl(m: "re.Match[str]") -> str:
        name = m.group(1)
        if name == "$":
            return "$"
        if name not in binding:
            raise MissingBinding(name)
        return canonical_text(binding[name])

    return _PLACEHOLDER_RE.sub(repl, template)


def expand_jobs(plan: PlanModel, id_prefix: str = "j") -> list[JobSpec]:
    """Cartesian product in declaration order: the first parameter varies
    slowest. Zero parameters produce one job with the literal command."""
    names = [p.name for p in plan.parameters]
    domains = [p.values() for p in plan.parameters]
    combos = list(itertools.product(*domains))
    width = max(1, len(str(len(combos))))
    jobs = []
    for i, combo in enumerate(combos, start=1):
        binding = dict(zip(names, combo))
        jobs.append(JobSpec(
            id=f"{id_prefix}{i:0{width}d}",
            binding=binding,
            command=substitute(plan.task.execute, binding),
        ))
    return jobs
