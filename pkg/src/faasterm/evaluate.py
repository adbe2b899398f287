"""Pure expression evaluation with provenance propagation."""

from __future__ import annotations

from typing import Mapping

from . import syntax as S
from .values import UNDEFINED, ErrorVal, Hash, List, Record, Value


def compute_hash(v: Value) -> Hash:
    return Hash(v)


def eval_expr(e: S.Expr, memory: Mapping[str, Value], locals: Mapping[str, Value],
              current_event: int | None) -> Value:
    """Evaluate ``e`` without touching any state.

    Locals shadow memory; unbound names read as ``undefined``. The result's
    provenance is the union of its inputs' provenance and ``current_event``.
    """
    here = frozenset() if current_event is None else frozenset((current_event,))
    return _eval(e, memory, locals, here)


def _eval(e, memory, locals, here: frozenset) -> Value:
    if isinstance(e, S.Lit):
        return e.value.tagged(here)
    if isinstance(e, S.Var):
        v = locals.get(e.name)
        if v is None:
            v = memory.get(e.name, UNDEFINED)
        return v.tagged(here)
    if isinstance(e, S.Field):
        base = _eval(e.expr, memory, locals, here)
        if isinstance(base, Record):
            got = base.get(e.name)
            return (got or UNDEFINED).tagged(base.prov)
        return ErrorVal(f"cannot read field {e.name!r} of {base}", prov=base.prov)
    if isinstance(e, S.RecordOf):
        fields = tuple((k, _eval(x, memory, locals, here)) for k, x in e.fields)
        prov = here.union(*(x.prov for _, x in fields))
        return Record(fields, prov=prov)
    if isinstance(e, S.ListOf):
        items = tuple(_eval(x, memory, locals, here) for x in e.items)
        return List(items, prov=here.union(*(x.prov for x in items)))
    if isinstance(e, S.ApplyBuiltin):
        args = [_eval(a, memory, locals, here) for a in e.args]
        if e.builtin == "computeHash" and len(args) == 1:
            return Hash(args[0], prov=args[0].prov | here)
        return ErrorVal(f"bad call to {e.builtin}", prov=here)
    raise TypeError(f"not an expression: {e!r}")
