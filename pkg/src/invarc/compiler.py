"""Deterministic front-end: parse a declarative system spec, type-check its
invariant, lower it to a geometric IR, and instantiate a compiled field.

Grammar (line comments with '#'):

    system <name> { state <v1>, <v2>, ... ; reference <catalog-id | none> ; }
    invariant simplex on (<vars>)
    invariant lorentz_cone time <var> space (<vars>)
    invariant stoichiometric matrix [[...],[...]]
    invariant psd dim <n>
    invariant center_of_mass masses [m1,...] bodies <n> dim <d>
    invariant hamiltonian split (d=<d>, k=<k>)
    invariant port_hamiltonian split (d=<d>, k=<k>)
    invariant generic split (d=<d>, k=<k>)
    invariant first_integral learned <count> known (<ids>) | known none
    net hidden <h> layers <l> activation <silu|softplus>
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import linalg, nets
from .constructions import (
    ComField,
    FirstIntegralModel,
    GenericModel,
    KNOWN_GRADIENTS,
    LorentzField,
    PoissonModel,
    PortHamiltonianModel,
    PsdField,
    SimplexField,
    StoichField,
)
from .errors import ConfigError, SpecError
from .systems import SYSTEMS

INVARIANT_KINDS = (
    "simplex",
    "lorentz_cone",
    "psd",
    "center_of_mass",
    "stoichiometric",
    "hamiltonian",
    "port_hamiltonian",
    "generic",
    "first_integral",
)


@dataclass
class InvariantSpec:
    kind: str
    payload: dict
    line: int = 0
    col: int = 0


@dataclass
class SystemSpec:
    name: str
    state_names: tuple
    reference: str | None
    invariants: list
    net_override: dict | None = None

    @property
    def dim(self) -> int:
        return len(self.state_names)


# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*|[-+]?\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|[{}()\[\],;=]")


@dataclass
class _Tok:
    text: str
    line: int
    col: int


def _tokenize(text: str, errors: list) -> list:
    tokens = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        pos = 0
        for match in _TOKEN_RE.finditer(line):
            if line[pos : match.start()].strip():
                errors.append((lineno, pos + 1, f"unexpected characters {line[pos:match.start()].strip()!r}"))
            tokens.append(_Tok(match.group(), lineno, match.start() + 1))
            pos = match.end()
        if line[pos:].strip():
            errors.append((lineno, pos + 1, f"unexpected characters {line[pos:].strip()!r}"))
    return tokens


class _Parser:
    def __init__(self, tokens: list, errors: list):
        self.tokens = tokens
        self.errors = errors
        self.pos = 0

    def peek(self) -> _Tok | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> _Tok | None:
        tok = self.peek()
        if tok is not None:
            self.pos += 1
        return tok

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or (self.tokens[-1] if self.tokens else None)
        if tok is None:
            self.errors.append((1, 1, msg))
        else:
            self.errors.append((tok.line, tok.col, msg))
        raise _Bail()

    def expect(self, text: str) -> _Tok:
        tok = self.next()
        if tok is None or tok.text != text:
            self.error(f"expected {text!r}" + (f", got {tok.text!r}" if tok else " at end of input"), tok)
        return tok

    def ident(self, what: str = "identifier") -> str:
        tok = self.next()
        if tok is None or not (tok.text[0].isalpha() or tok.text[0] == "_"):
            self.error(f"expected {what}" + (f", got {tok.text!r}" if tok else ""), tok)
        return tok.text

    def number(self):
        tok = self.next()
        try:
            val = float(tok.text)
        except (TypeError, ValueError):
            self.error("expected a number" + (f", got {tok.text!r}" if tok else ""), tok)
        return val

    def integer(self) -> int:
        tok = self.peek()
        val = self.number()
        if val != int(val):
            self.error("expected an integer", tok)
        return int(val)

    def ident_list(self) -> list:
        names = [self.ident()]
        while self.peek() is not None and self.peek().text == ",":
            self.next()
            names.append(self.ident())
        return names

    def paren_idents(self) -> list:
        self.expect("(")
        names = self.ident_list()
        self.expect(")")
        return names

    def number_list(self) -> list:
        self.expect("[")
        vals = [self.number()]
        while self.peek() is not None and self.peek().text == ",":
            self.next()
            vals.append(self.number())
        self.expect("]")
        return vals

    def matrix(self) -> list:
        self.expect("[")
        rows = [self.number_list()]
        while self.peek() is not None and self.peek().text == ",":
            self.next()
            rows.append(self.number_list())
        self.expect("]")
        return rows

    def split_decl(self) -> tuple[int, int]:
        self.expect("(")
        self.expect("d")
        self.expect("=")
        d = self.integer()
        self.expect(",")
        self.expect("k")
        self.expect("=")
        k = self.integer()
        self.expect(")")
        return d, k


class _Bail(Exception):
    pass


def _skip_to_next_statement(parser: _Parser):
    starters = {"system", "invariant", "net"}
    while True:
        tok = parser.peek()
        if tok is None or tok.text in starters:
            return
        parser.next()


def parse_spec(text: str) -> SystemSpec:
    """Parse and validate a system spec; raises SpecError listing every
    (line, column, message) diagnostic found."""
    errors: list = []
    tokens = _tokenize(text, errors)
    parser = _Parser(tokens, errors)
    name = None
    state_names: list = []
    reference: str | None = None
    invariants: list = []
    net_override = None
    seen_system = False

    while parser.peek() is not None:
        tok = parser.peek()
        try:
            if tok.text == "system":
                parser.next()
                if seen_system:
                    parser.error("duplicate system block", tok)
                seen_system = True
                name = parser.ident("system name")
                parser.expect("{")
                parser.expect("state")
                state_names = parser.ident_list()
                parser.expect(";")
                parser.expect("reference")
                reference = parser.ident("catalog id or 'none'")
                parser.expect(";")
                parser.expect("}")
            elif tok.text == "invariant":
                parser.next()
                kind_tok = parser.peek()
                kind = parser.ident("invariant kind")
                if kind not in INVARIANT_KINDS:
                    parser.error(f"unknown invariant kind {kind!r}", kind_tok)
                invariants.append(_parse_invariant(parser, kind, kind_tok))
            elif tok.text == "net":
                parser.next()
                parser.expect("hidden")
                hidden = parser.integer()
                parser.expect("layers")
                layers = parser.integer()
                parser.expect("activation")
                act_tok = parser.peek()
                act = parser.ident("activation")
                if act not in nets.ACTIVATIONS:
                    parser.error(f"unknown activation {act!r}", act_tok)
                net_override = {"hidden_dim": hidden, "n_layers": layers, "activation": act}
            else:
                parser.error(f"expected a declaration, got {tok.text!r}", tok)
        except _Bail:
            _skip_to_next_statement(parser)

    _validate(errors, name, state_names, reference, invariants)
    if errors:
        raise SpecError(errors)
    return SystemSpec(
        name=name,
        state_names=tuple(state_names),
        reference=None if reference == "none" else reference,
        invariants=invariants,
        net_override=net_override,
    )


def _parse_invariant(parser: _Parser, kind: str, tok: _Tok) -> InvariantSpec:
    payload: dict = {}
    if kind == "simplex":
        parser.expect("on")
        payload["vars"] = parser.paren_idents()
    elif kind == "lorentz_cone":
        parser.expect("time")
        payload["time_var"] = parser.ident()
        parser.expect("space")
        payload["space_vars"] = parser.paren_idents()
    elif kind == "stoichiometric":
        parser.expect("matrix")
        payload["matrix"] = parser.matrix()
    elif kind == "psd":
        parser.expect("dim")
        payload["dim"] = parser.integer()
    elif kind == "center_of_mass":
        parser.expect("masses")
        payload["masses"] = parser.number_list()
        parser.expect("bodies")
        payload["bodies"] = parser.integer()
        parser.expect("dim")
        payload["space_dim"] = parser.integer()
    elif kind in ("hamiltonian", "port_hamiltonian", "generic"):
        parser.expect("split")
        d, k = parser.split_decl()
        payload["d"], payload["k"] = d, k
    elif kind == "first_integral":
        parser.expect("learned")
        payload["learned"] = parser.integer()
        parser.expect("known")
        nxt = parser.peek()
        if nxt is not None and nxt.text == "none":
            parser.next()
            payload["known"] = []
        else:
            payload["known"] = parser.paren_idents()
    return InvariantSpec(kind=kind, payload=payload, line=tok.line, col=tok.col)


def _validate(errors: list, name, state_names, reference, invariants) -> None:
    if name is None:
        errors.append((1, 1, "missing system block"))
        return
    if len(set(state_names)) != len(state_names):
        dupes = sorted({n for n in state_names if state_names.count(n) > 1})
        errors.append((1, 1, f"duplicate state names: {', '.join(dupes)}"))
    if reference not in (None, "none") and reference not in SYSTEMS:
        errors.append((1, 1, f"unknown reference system {reference!r}"))
    elif reference not in (None, "none") and SYSTEMS[reference].dim != len(state_names):
        errors.append(
            (1, 1, f"reference {reference!r} has dim {SYSTEMS[reference].dim}, spec declares {len(state_names)}")
        )
    if not invariants:
        if not errors:
            errors.append((1, 1, "spec declares no invariant"))
        return
    if len(invariants) > 1:
        inv = invariants[1]
        errors.append(
            (inv.line, inv.col,
             "cross-kind composition is not supported; declare one invariant "
             "(first_integral composes multiple constraints internally)")
        )
        return
    inv = invariants[0]
    n = len(state_names)
    where = (inv.line, inv.col)
    p = inv.payload
    if inv.kind == "simplex":
        if list(p["vars"]) != list(state_names):
            errors.append((*where, "simplex variable list must name every state variable in order"))
    elif inv.kind == "lorentz_cone":
        if [p["time_var"]] + list(p["space_vars"]) != list(state_names):
            errors.append((*where, "cone variables must cover the state (time variable first)"))
    elif inv.kind == "stoichiometric":
        rows = p["matrix"]
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            errors.append((*where, "matrix rows have inconsistent lengths"))
        elif widths.pop() != n:
            errors.append((*where, f"matrix has {len(rows[0])} columns but the state has {n} species"))
        elif any(v != int(v) for row in rows for v in row):
            errors.append((*where, "molecular matrix entries must be integers"))
    elif inv.kind == "psd":
        want = nets.tril_dim(p["dim"])
        if p["dim"] < 1:
            errors.append((*where, "psd dim must be positive"))
        elif want != n:
            errors.append((*where, f"psd dim {p['dim']} needs {want} triangle coordinates, state has {n}"))
    elif inv.kind == "center_of_mass":
        if len(p["masses"]) != p["bodies"]:
            errors.append((*where, "masses list length must equal the body count"))
        elif any(m <= 0 for m in p["masses"]):
            errors.append((*where, "masses must be positive"))
        elif 2 * p["bodies"] * p["space_dim"] != n:
            errors.append((*where, f"center_of_mass needs 2*bodies*dim = {2*p['bodies']*p['space_dim']} state variables, got {n}"))
    elif inv.kind in ("hamiltonian", "port_hamiltonian", "generic"):
        d, k = p["d"], p["k"]
        if d < 1 or k < 0:
            errors.append((*where, "split needs d >= 1 and k >= 0"))
        elif 2 * d + k != n:
            errors.append((*where, f"split (d={d}, k={k}) covers {2*d+k} coordinates, state has {n}"))
        elif inv.kind == "generic" and k < 1:
            errors.append((*where, "generic needs k >= 1 Casimir coordinate for the entropy"))
    elif inv.kind == "first_integral":
        if p["learned"] < 0:
            errors.append((*where, "learned count must be nonnegative"))
        if p["learned"] + len(p["known"]) < 1:
            errors.append((*where, "first_integral needs at least one constraint"))
        for kid in p["known"]:
            if kid not in KNOWN_GRADIENTS:
                errors.append((*where, f"unknown gradient id {kid!r}"))
            elif KNOWN_GRADIENTS[kid].dim != n:
                errors.append((*where, f"gradient {kid!r} has dim {KNOWN_GRADIENTS[kid].dim}, state has {n}"))


# ---------------------------------------------------------------------------
# lowering


@dataclass(frozen=True)
class SlotSpec:
    name: str
    net_kind: str  # "mlp" | "inn"
    in_dim: int
    out_dim: int
    extra: tuple = ()  # sorted (key, value) pairs for non-MLP settings


@dataclass
class GeometricIR:
    kind: str
    manifold: str
    rewrite: str
    state_names: tuple
    reference: str | None
    dims: dict
    payload: dict
    slots: list
    net: dict  # hidden_dim / n_layers / activation defaults after overrides


_LOWERING = {
    "simplex": ("unit-sphere", "skew-symmetric-generator"),
    "lorentz_cone": ("lorentz-tangent-cone", "tangent-cone-projection"),
    "psd": ("cholesky-manifold", "triangular-factor-flow"),
    "center_of_mass": ("mass-weighted-null-space", "mean-subtraction"),
    "stoichiometric": ("stoichiometric-null-space", "null-space-rates"),
    "hamiltonian": ("latent-symplectic", "canonical-poisson"),
    "port_hamiltonian": ("latent-symplectic", "poisson-plus-dissipation"),
    "generic": ("latent-symplectic", "generic-degenerate"),
    "first_integral": ("learned-constraint-manifold", "tangent-space-projection"),
}

DIAGNOSTICS = {
    "simplex": ("sum_err", "min_coord", "norm_err"),
    "lorentz_cone": ("cone_violation",),
    "psd": ("min_eig", "sym_err"),
    "center_of_mass": ("com_pos_drift", "com_mom_drift"),
    "stoichiometric": ("elem_drift",),
    "hamiltonian": ("K_drift", "c_drift"),
    "port_hamiltonian": ("K",),
    "generic": ("K_drift", "S", "deg_J0_gradS", "deg_Mz_gradK", "entropy_production"),
    "first_integral": ("integral_drift_per_constraint",),
}


def lower(spec: SystemSpec) -> GeometricIR:
    """Deterministic lowering of a validated spec to its geometric IR."""
    inv = spec.invariants[0]
    manifold, rewrite = _LOWERING[inv.kind]
    n = spec.dim
    net = {"hidden_dim": 64, "n_layers": 3, "activation": "silu"}
    if spec.net_override:
        net.update(spec.net_override)
    dims: dict = {"n": n}
    payload: dict = {}
    slots: list = []

    if inv.kind == "simplex":
        slots.append(SlotSpec("net", "mlp", n, n * n))
    elif inv.kind == "lorentz_cone":
        slots.append(SlotSpec("net", "mlp", n, n))
        dims["space"] = n - 1
    elif inv.kind == "psd":
        dims["matrix_dim"] = inv.payload["dim"]
        slots.append(SlotSpec("net", "mlp", n, n))
    elif inv.kind == "center_of_mass":
        bodies, space = inv.payload["bodies"], inv.payload["space_dim"]
        dims["bodies"], dims["space_dim"] = bodies, space
        payload["masses"] = [float(m) for m in inv.payload["masses"]]
        slots.append(SlotSpec("net", "mlp", n, bodies * space))
    elif inv.kind == "stoichiometric":
        m = np.asarray(inv.payload["matrix"], dtype=float)
        basis = linalg.nullspace_basis(m)
        k = basis.shape[1]
        if k == 0:
            raise SpecError([(inv.line, inv.col, "no admissible dynamics: the molecular matrix has a trivial null space")])
        dims["k"] = k
        dims["rank"] = n - k
        payload["matrix"] = [[int(v) for v in row] for row in inv.payload["matrix"]]
        slots.append(SlotSpec("rate", "mlp", n + 1, k))
    elif inv.kind in ("hamiltonian", "port_hamiltonian", "generic"):
        d, k = inv.payload["d"], inv.payload["k"]
        dims["d"], dims["k"] = d, k
        slots.append(SlotSpec("inn", "inn", n, n, extra=(("n_blocks", 8),)))
        slots.append(SlotSpec("k_net", "mlp", n, 1))
        if inv.kind == "port_hamiltonian":
            slots.append(SlotSpec("l_net", "mlp", n, nets.tril_dim(n), extra=(("init_sigma", 0.01),)))
        if inv.kind == "generic":
            slots.append(SlotSpec("s_net", "mlp", k, 1))
            slots.append(SlotSpec("m_net", "mlp", n, nets.tril_dim(n), extra=(("init_sigma", 0.01),)))
    elif inv.kind == "first_integral":
        learned = inv.payload["learned"]
        known = list(inv.payload["known"])
        dims["constraints"] = learned + len(known)
        dims["learned"] = learned
        payload["known"] = known
        slots.append(SlotSpec("base", "mlp", n, n))
        for i in range(learned):
            slots.append(SlotSpec(f"v{i}", "mlp", n, 1))

    return GeometricIR(
        kind=inv.kind,
        manifold=manifold,
        rewrite=rewrite,
        state_names=spec.state_names,
        reference=spec.reference,
        dims=dims,
        payload=payload,
        slots=slots,
        net=net,
    )


# ---------------------------------------------------------------------------
# model instantiation


@dataclass
class CompiledField:
    ir: GeometricIR
    model: object
    store: nets.ParamStore
    seed: int

    @property
    def state_names(self):
        return self.ir.state_names


def _mlp_cfg(slot: SlotSpec, net: dict) -> nets.MlpConfig:
    extra = dict(slot.extra)
    return nets.MlpConfig(
        in_dim=slot.in_dim,
        out_dim=slot.out_dim,
        hidden_dim=net["hidden_dim"],
        n_layers=net["n_layers"],
        activation=net["activation"],
        init_sigma=extra.get("init_sigma"),
    )


def build_model(ir: GeometricIR, seed: int) -> CompiledField:
    """Instantiate the construction for an IR with seeded parameters."""
    net = ir.net
    slot = {s.name: s for s in ir.slots}
    n = ir.dims["n"]
    if ir.kind == "simplex":
        model = SimplexField(n, net=_mlp_cfg(slot["net"], net))
    elif ir.kind == "lorentz_cone":
        model = LorentzField(ir.dims["space"], net=_mlp_cfg(slot["net"], net))
    elif ir.kind == "psd":
        model = PsdField(ir.dims["matrix_dim"], net=_mlp_cfg(slot["net"], net))
    elif ir.kind == "center_of_mass":
        model = ComField(ir.payload["masses"], ir.dims["space_dim"], net=_mlp_cfg(slot["net"], net))
    elif ir.kind == "stoichiometric":
        model = StoichField(np.asarray(ir.payload["matrix"], dtype=float), net=_mlp_cfg(slot["rate"], net))
    elif ir.kind in ("hamiltonian", "port_hamiltonian", "generic"):
        d, k = ir.dims["d"], ir.dims["k"]
        inn_cfg = nets.InnConfig(
            dim=n,
            n_blocks=dict(slot["inn"].extra).get("n_blocks", 8),
            hidden_dim=net["hidden_dim"],
            n_layers=net["n_layers"],
            activation=net["activation"],
            mixing_seed=seed,
        )
        k_cfg = _mlp_cfg(slot["k_net"], net)
        if ir.kind == "hamiltonian":
            model = PoissonModel(d, k, inn=inn_cfg, k_net=k_cfg)
        elif ir.kind == "port_hamiltonian":
            model = PortHamiltonianModel(d, k, inn=inn_cfg, k_net=k_cfg, l_net=_mlp_cfg(slot["l_net"], net))
        else:
            model = GenericModel(
                d, k, inn=inn_cfg, k_net=k_cfg,
                s_net=_mlp_cfg(slot["s_net"], net),
                m_net=_mlp_cfg(slot["m_net"], net),
            )
    elif ir.kind == "first_integral":
        model = FirstIntegralModel(
            n,
            base_net=_mlp_cfg(slot["base"], net),
            n_learned=ir.dims["learned"],
            learned_net=_mlp_cfg(slot["v0"], net) if ir.dims["learned"] else None,
            known=[KNOWN_GRADIENTS[kid] for kid in ir.payload["known"]],
        )
    else:
        raise ConfigError(f"cannot build kind {ir.kind!r}")
    store = model.new_params(seed)
    return CompiledField(ir=ir, model=model, store=store, seed=seed)


# ---------------------------------------------------------------------------
# IR dump


def _slot_ranges(ir: GeometricIR) -> list[tuple[str, int, int]]:
    """(slot name, offset, length): each slot covers one contiguous range."""
    probe = build_model(ir, seed=0)
    ranges = []
    for s in ir.slots:
        offs = [
            (off, length)
            for name, (off, length) in probe.store.slices.items()
            if name == s.name or name.startswith(s.name + ".")
        ]
        offs.sort()
        start = offs[0][0]
        total = sum(length for _, length in offs)
        assert offs[-1][0] + offs[-1][1] - start == total, "slot slices must be contiguous"
        ranges.append((s.name, start, total))
    return ranges


def dump_ir(ir: GeometricIR) -> str:
    """Stable, diffable text rendering of the IR plus its diagnostics plan."""
    lines = ["geometric-ir v1"]
    lines.append(f"kind = {ir.kind}")
    lines.append(f"manifold = {ir.manifold}")
    lines.append(f"rewrite = {ir.rewrite}")
    lines.append("state = " + ", ".join(ir.state_names))
    lines.append(f"reference = {ir.reference or 'none'}")
    for key in sorted(ir.dims):
        lines.append(f"dim.{key} = {ir.dims[key]}")
    for key in sorted(ir.payload):
        val = ir.payload[key]
        if key == "matrix":
            for i, row in enumerate(val):
                lines.append(f"payload.matrix.row{i} = " + ", ".join(str(v) for v in row))
        elif key == "masses":
            lines.append("payload.masses = " + ", ".join(f"{v:.17g}" for v in val))
        elif key == "known":
            lines.append("payload.known = " + (", ".join(val) if val else "none"))
        else:
            lines.append(f"payload.{key} = {val}")
    for (slot, start, total), spec in zip(_slot_ranges(ir), ir.slots):
        desc = f"slot.{slot} = {spec.net_kind} in={spec.in_dim} out={spec.out_dim}"
        desc += f" hidden={ir.net['hidden_dim']} layers={ir.net['n_layers']} activation={ir.net['activation']}"
        for k, v in spec.extra:
            desc += f" {k}={v}"
        desc += f" params[{start}:{start + total}]"
        lines.append(desc)
    lines.append("diagnostics = " + ", ".join(_diagnostic_names(ir)))
    return "\n".join(lines) + "\n"


def _diagnostic_names(ir: GeometricIR) -> tuple:
    if ir.kind == "first_integral":
        names = [f"{k}_drift" for k in ir.payload["known"]]
        names += [f"v{i}_drift" for i in range(ir.dims["learned"])]
        return tuple(names)
    return DIAGNOSTICS[ir.kind]


def compile_text(text: str, seed: int = 0) -> CompiledField:
    """parse -> lower -> build in one call."""
    spec = parse_spec(text)
    return build_model(lower(spec), seed)
