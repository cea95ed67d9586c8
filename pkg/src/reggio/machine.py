"""Region-language dynamic semantics.

A configuration is a region stack (frames, top = last), an open heap, a
closed heap, and a frozen heap; each heap maps region-id -> store, and a
store maps object-id -> Object.  The machine consumes effects emitted by
the command machine and mutates the configuration in place.

``bugs`` is a set of named, deliberately planted faults used to validate
the invariant checker by mutation testing; the shipped default is empty.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

from .model import Cap, ClassTable, ClassName, vpa
from .syntax import Use

Value = tuple[Cap, int]

V_UNDEF = None  # buried variable binding

KNOWN_BUGS = frozenset({
    "exit-keep-temps",     # exit leaks the popped frame's temporary store
    "exit-mut-writeback",  # exit writes the bridge back as mut, not iso
    "shallow-freeze",      # freeze does not freeze nested regions
    "skip-bury",           # drop does not invalidate the variable
    "reinstate-iso",       # exit restores iso captures consumed on enter
    "vpa-paused-identity",  # captures keep their capability unsuspended
})


class Stuck(Exception):
    """An undefined lookup: unreachable from well-typed programs."""


@dataclass
class Object:
    tag: str  # class name, or "Cell"
    fields: dict[str, Value]

    def copy(self) -> "Object":
        return Object(self.tag, dict(self.fields))


Store = dict[int, Object]


@dataclass
class Frame:
    r: int
    temps: Store = field(default_factory=dict)
    vars: dict[str, Optional[Value]] = field(default_factory=dict)
    entry: Optional[tuple[int, str]] = None  # (object-id, field) entered via
    reinstate: list[tuple[str, Value]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Effects
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Load:
    x: str
    y: str
    f: str


@dataclass(frozen=True)
class Swap:
    x: str
    y: str
    f: str
    use: Use


@dataclass(frozen=True)
class Halloc:
    x: str
    cap: Cap  # mut or iso
    cls: str
    uses: tuple[Use, ...]


@dataclass(frozen=True)
class Salloc:
    x: str
    cap: Cap  # tmp or var
    cls: str  # class name or "Cell"
    uses: tuple[Use, ...]


@dataclass(frozen=True)
class EnterEff:
    w: str
    cap: Cap  # tmp (field form) or var (cell form)
    y: str
    f: str
    captures: tuple[tuple[str, Use], ...]


@dataclass(frozen=True)
class BadEnter:
    y: str
    f: str


@dataclass(frozen=True)
class ExitEff:
    x: str
    use: Use
    y: str
    f: str
    w: str
    g: str


@dataclass(frozen=True)
class FreezeEff:
    x: str
    use: Use


@dataclass(frozen=True)
class MergeEff:
    x: str
    use: Use


@dataclass(frozen=True)
class CastEff:
    x: str
    use: Use
    ty: object  # model.Type


@dataclass(frozen=True)
class NoCastEff:
    x: str
    use: Use
    ty: object


@dataclass(frozen=True)
class Bind:
    pairs: tuple[tuple[str, Use], ...]


@dataclass(frozen=True)
class Eps:
    pass


Effect = (Load | Swap | Halloc | Salloc | EnterEff | BadEnter | ExitEff
          | FreezeEff | MergeEff | CastEff | NoCastEff | Bind | Eps)


def effect_name(eff: Effect) -> str:
    return {
        Load: "load", Swap: "swap", Halloc: "halloc", Salloc: "salloc",
        EnterEff: "enter", BadEnter: "badenter", ExitEff: "exit",
        FreezeEff: "freeze", MergeEff: "merge", CastEff: "cast",
        NoCastEff: "nocast", Bind: "bind", Eps: "eps",
    }[type(eff)]


def effect_args(eff: Effect) -> list[str]:
    if isinstance(eff, Load):
        return [eff.x, f"{eff.y}.{eff.f}"]
    if isinstance(eff, Swap):
        return [eff.x, f"{eff.y}.{eff.f}", str(eff.use)]
    if isinstance(eff, Halloc):
        return [eff.x, str(eff.cap), f"#{eff.cls}",
                *(str(u) for u in eff.uses)]
    if isinstance(eff, Salloc):
        return [eff.x, str(eff.cap), f"#{eff.cls}",
                *(str(u) for u in eff.uses)]
    if isinstance(eff, EnterEff):
        return [eff.w, str(eff.cap), f"{eff.y}.{eff.f}",
                *(f"{z}={u}" for z, u in eff.captures)]
    if isinstance(eff, BadEnter):
        return [f"{eff.y}.{eff.f}"]
    if isinstance(eff, ExitEff):
        return [eff.x, str(eff.use), f"{eff.y}.{eff.f}",
                f"{eff.w}.{eff.g}"]
    if isinstance(eff, (FreezeEff, MergeEff)):
        return [eff.x, str(eff.use)]
    if isinstance(eff, (CastEff, NoCastEff)):
        return [eff.x, str(eff.use), str(eff.ty)]
    if isinstance(eff, Bind):
        return [f"{x}={u}" for x, u in eff.pairs]
    return []


# ---------------------------------------------------------------------------
# The machine
# ---------------------------------------------------------------------------

class Machine:
    def __init__(self, classes: ClassTable,
                 bugs: frozenset[str] = frozenset()) -> None:
        unknown = bugs - KNOWN_BUGS
        if unknown:
            raise ValueError(f"unknown bug switches: {sorted(unknown)}")
        self.classes = classes
        self.bugs = bugs
        self._next_iota = 0
        self._next_region = 1
        self.frames: list[Frame] = [Frame(r=0)]
        self.h_op: dict[int, Store] = {0: {}}
        self.h_cl: dict[int, Store] = {}
        self.h_fr: dict[int, Store] = {}

    # -- helpers ---------------------------------------------------------------

    def fresh_iota(self) -> int:
        self._next_iota += 1
        return self._next_iota

    def fresh_region(self) -> int:
        self._next_region += 1
        return self._next_region

    @property
    def top(self) -> Frame:
        return self.frames[-1]

    def get(self, vars: dict[str, Optional[Value]], u: Use) -> Value:
        """Destructive/non-destructive variable read per the use form."""
        if u.name not in vars:
            raise Stuck(f"get: unbound variable {u.name}")
        v = vars[u.name]
        if v is V_UNDEF:
            raise Stuck(f"get: read of buried variable {u.name}")
        if u.drop:
            if "skip-bury" not in self.bugs:
                vars[u.name] = V_UNDEF
            return v
        if v[0] in (Cap.VAR, Cap.ISO):
            raise Stuck(f"get: plain read of {v[0]} variable {u.name}")
        return v

    def peek(self, name: str) -> Value:
        v = self.top.vars.get(name)
        if v is V_UNDEF or v is None:
            raise Stuck(f"peek: variable {name} is not bound")
        return v

    def stack_load(self, iota: int) -> Optional[Object]:
        for frame in reversed(self.frames):
            if iota in frame.temps:
                return frame.temps[iota]
        return None

    def heap_load(self, iota: int,
                  heaps: tuple[dict[int, Store], ...]) -> Optional[Object]:
        for heap in heaps:
            for store in heap.values():
                if iota in store:
                    return store[iota]
        return None

    def cfg_load(self, iota: int,
                 heaps: tuple[dict[int, Store], ...]) -> Optional[Object]:
        obj = self.stack_load(iota)
        if obj is not None:
            return obj
        return self.heap_load(iota, heaps)

    def region_of(self, iota: int,
                  heap: dict[int, Store]) -> Optional[int]:
        for r, store in heap.items():
            if iota in store:
                return r
        return None

    def _fields_for(self, cls: str, vals: list[Value]) -> dict[str, Value]:
        names = [f for f, _ in self.classes.ftypes(ClassName(cls))]
        if len(names) != len(vals):
            raise Stuck(f"halloc: arity mismatch for {cls}")
        return dict(zip(names, vals))

    # -- dynamic checks used by the driver --------------------------------------

    def bridge_target(self, y: str, f: str) -> int:
        """The object-id stored at y.f (entry lval of an enter)."""
        _, iota_y = self.peek(y)
        obj = self.cfg_load(iota_y, (self.h_op,))
        if obj is None or f not in obj.fields:
            raise Stuck(f"enter: cannot resolve {y}.{f}")
        v = obj.fields[f]
        if v is V_UNDEF:
            raise Stuck(f"enter: {y}.{f} is undefined")
        return v[1]

    def enter_enabled(self, y: str, f: str) -> bool:
        """True iff the region holding the bridge y.f is currently closed."""
        iota = self.bridge_target(y, f)
        return self.region_of(iota, self.h_cl) is not None

    def cast_matches(self, name: str, ty) -> bool:
        """True iff the dynamic tag of the value bound to name subtags ty."""
        from .model import CapType, CellHead, leaves
        v = self.top.vars.get(name)
        if v is V_UNDEF or v is None:
            raise Stuck(f"cast: variable {name} is not bound")
        obj = self.cfg_load(v[1], (self.h_op, self.h_cl, self.h_fr))
        if obj is None:
            raise Stuck(f"cast: dangling object id {v[1]}")
        for leaf in leaves(ty):
            if isinstance(leaf.head, CellHead):
                if obj.tag == "Cell":
                    return True
            elif obj.tag == leaf.head.name:
                return True
        return False

    # -- stepping -----------------------------------------------------------------

    def step_effect(self, eff: Effect) -> None:
        handler = getattr(self, "_step_" + effect_name(eff))
        handler(eff)

    def _step_eps(self, eff: Eps) -> None:
        pass

    def _step_bind(self, eff: Bind) -> None:
        top = self.top
        for x, u in eff.pairs:
            top.vars[x] = self.get(top.vars, u)

    def _step_load(self, eff: Load) -> None:
        top = self.top
        k_y, iota_y = self.peek(eff.y)
        obj = self.cfg_load(iota_y, (self.h_op, self.h_fr))
        if obj is None:
            raise Stuck(f"load: dangling object id {iota_y}")
        if eff.f not in obj.fields:
            raise Stuck(f"load: no field {eff.f} on {obj.tag}")
        k_f, iota_f = obj.fields[eff.f]
        k = vpa(k_y, k_f)
        if k is None:
            raise Stuck(f"load: {k_y} cannot see {k_f}")
        top.vars[eff.x] = (k, iota_f)

    def _step_swap(self, eff: Swap) -> None:
        top = self.top
        v_new = self.get(top.vars, eff.use)
        _, iota_y = self.peek(eff.y)
        obj = top.temps.get(iota_y)
        if obj is None:
            obj = self.heap_load(iota_y, (self.h_op,))
        if obj is None:
            raise Stuck(f"swap: {eff.y} does not refer to a writable object")
        if eff.f not in obj.fields:
            raise Stuck(f"swap: no field {eff.f} on {obj.tag}")
        old = obj.fields[eff.f]
        obj.fields[eff.f] = v_new
        top.vars[eff.x] = old

    def _step_halloc(self, eff: Halloc) -> None:
        top = self.top
        vals = [self.get(top.vars, u) for u in eff.uses]
        iota = self.fresh_iota()
        obj = Object(eff.cls, self._fields_for(eff.cls, vals))
        if eff.cap is Cap.MUT:
            self.h_op[top.r][iota] = obj
            top.vars[eff.x] = (Cap.MUT, iota)
        elif eff.cap is Cap.ISO:
            r = self.fresh_region()
            self.h_cl[r] = {iota: obj}
            top.vars[eff.x] = (Cap.ISO, iota)
        else:
            raise Stuck(f"halloc: bad capability {eff.cap}")

    def _step_salloc(self, eff: Salloc) -> None:
        top = self.top
        vals = [self.get(top.vars, u) for u in eff.uses]
        iota = self.fresh_iota()
        if eff.cls == "Cell":
            if len(vals) != 1:
                raise Stuck("salloc: Cell takes exactly one value")
            obj = Object("Cell", {"val": vals[0]})
        else:
            obj = Object(eff.cls, self._fields_for(eff.cls, vals))
        if eff.cap not in (Cap.TMP, Cap.VAR):
            raise Stuck(f"salloc: bad capability {eff.cap}")
        top.temps[iota] = obj
        top.vars[eff.x] = (eff.cap, iota)

    def _step_enter(self, eff: EnterEff) -> None:
        top = self.top
        new_vars: dict[str, Optional[Value]] = {}
        reinstate: list[tuple[str, Value]] = []
        for z, u in eff.captures:
            v = self.get(top.vars, u)
            k, iota = v
            if k is Cap.ISO:
                k2 = k
                if u.drop:
                    reinstate.append((u.name, v))
            elif "vpa-paused-identity" in self.bugs:
                k2 = k
            else:
                k2 = vpa(Cap.PAUSED, k)
                if k2 is None:
                    raise Stuck(f"enter: capture {z} has capability {k}")
            new_vars[z] = (k2, iota)
        _, iota_y = self.peek(eff.y)
        obj_y = self.cfg_load(iota_y, (self.h_op,))
        if obj_y is None or eff.f not in obj_y.fields:
            raise Stuck(f"enter: cannot resolve {eff.y}.{eff.f}")
        _, bridge = obj_y.fields[eff.f]
        r = self.region_of(bridge, self.h_cl)
        if r is None:
            raise Stuck("enter: target region is not closed "
                        "(badenter should have been selected)")
        self.h_op[r] = self.h_cl.pop(r)
        iota_cell = self.fresh_iota()
        cell = Object("Cell", {"val": (Cap.MUT, bridge)})
        new_vars[eff.w] = (eff.cap, iota_cell)
        self.frames.append(Frame(r=r, temps={iota_cell: cell},
                                 vars=new_vars, entry=(iota_y, eff.f),
                                 reinstate=reinstate))

    def _step_badenter(self, eff: BadEnter) -> None:
        iota = self.bridge_target(eff.y, eff.f)
        if self.region_of(iota, self.h_cl) is not None:
            raise Stuck("badenter: target region is closed "
                        "(enter should have been selected)")

    def _step_exit(self, eff: ExitEff) -> None:
        if len(self.frames) < 2:
            raise Stuck("exit: no region to exit")
        popped = self.frames.pop()
        ret = self.get(popped.vars, eff.use)
        w_v = popped.vars.get(eff.w)
        if w_v is V_UNDEF or w_v is None:
            raise Stuck(f"exit: bridge cell {eff.w} is not bound")
        cell = popped.temps.get(w_v[1])
        if cell is None or eff.g not in cell.fields:
            raise Stuck(f"exit: {eff.w}.{eff.g} does not name the cell")
        _, new_bridge = cell.fields[eff.g]
        top = self.top
        _, iota_y = self.peek(eff.y)
        obj_y = self.stack_load(iota_y)
        if obj_y is None:
            obj_y = self.heap_load(iota_y, (self.h_op,))
        if obj_y is None or eff.f not in obj_y.fields:
            raise Stuck(f"exit: cannot resolve {eff.y}.{eff.f}")
        k_f, _ = obj_y.fields[eff.f]
        if "exit-mut-writeback" in self.bugs:
            k_f = Cap.MUT
        obj_y.fields[eff.f] = (k_f, new_bridge)
        self.h_cl[popped.r] = self.h_op.pop(popped.r)
        if "exit-keep-temps" in self.bugs:
            top.temps.update(popped.temps)
        if "reinstate-iso" in self.bugs:
            for name, val in popped.reinstate:
                top.vars[name] = val
        top.vars[eff.x] = ret

    def reachable_regions(self, r: int) -> set[int]:
        """Closed regions transitively reachable from region r's objects."""
        seen: set[int] = set()
        work = [r]
        while work:
            cur = work.pop()
            store = self.h_cl.get(cur)
            if store is None:
                continue
            for obj in store.values():
                for v in obj.fields.values():
                    if v is V_UNDEF:
                        continue
                    r2 = self.region_of(v[1], self.h_cl)
                    if r2 is not None and r2 != cur and r2 not in seen:
                        seen.add(r2)
                        work.append(r2)
        return seen - {r}

    def _step_freeze(self, eff: FreezeEff) -> None:
        top = self.top
        k, iota = self.get(top.vars, eff.use)
        if k is not Cap.ISO:
            raise Stuck(f"freeze: expected an iso value, got {k}")
        r = self.region_of(iota, self.h_cl)
        if r is None:
            raise Stuck("freeze: target region is not closed")
        regions = {r}
        if "shallow-freeze" not in self.bugs:
            regions |= self.reachable_regions(r)
        for rid in regions:
            self.h_fr[rid] = self.h_cl.pop(rid)
        top.vars[eff.x] = (Cap.IMM, iota)

    def _step_merge(self, eff: MergeEff) -> None:
        top = self.top
        k, iota = self.get(top.vars, eff.use)
        if k is not Cap.ISO:
            raise Stuck(f"merge: expected an iso value, got {k}")
        r = self.region_of(iota, self.h_cl)
        if r is None:
            raise Stuck("merge: target region is not closed")
        self.h_op[top.r].update(self.h_cl.pop(r))
        top.vars[eff.x] = (Cap.MUT, iota)

    def _step_cast(self, eff: CastEff) -> None:
        top = self.top
        v = self.get(top.vars, eff.use)
        top.vars[eff.x] = v

    def _step_nocast(self, eff: NoCastEff) -> None:
        top = self.top
        v = self.get(top.vars, eff.use)
        top.vars[eff.x] = v

    # -- reporting ---------------------------------------------------------------

    def region_stack_ids(self) -> list[int]:
        return [f.r for f in self.frames]

    def all_objects(self) -> Iterator[tuple[str, int, int, Object]]:
        """(kind, region, object-id, object) over the whole configuration."""
        for frame in self.frames:
            for iota, obj in frame.temps.items():
                yield "temp", frame.r, iota, obj
        for kind, heap in (("open", self.h_op), ("closed", self.h_cl),
                           ("frozen", self.h_fr)):
            for r, store in heap.items():
                for iota, obj in store.items():
                    yield kind, r, iota, obj
