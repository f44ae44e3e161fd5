"""Recursive-descent parser for the mission language.

Grammar (lowest to highest precedence)::

    mission  := formula | clause ((NEWLINE | ';') clause)*
    clause   := 'core' ':' formula | 'always' ':' formula | 'finally_stay' ':' formula
    formula  := or
    or       := and ('|' and)*
    and      := until ('&' until)*
    until    := unary ('U' until)?
    unary    := ('!' | 'F' | 'X' | 'G') unary | primary
    primary  := 'true' | 'false' | atom | NAME | '(' formula ')'
    atom     := 'in' '(' INT ',' NAME ')'
              | 'near' '(' INT ',' NAME ',' NUM ',' NUM ')'
              | 'unc' '(' NAME ',' NUM ')'
              | 'nearc' '(' INT ',' NAME ',' NUM ',' NUM ',' NAME ')'

Negation is pushed to the leaves while building the formula; negating a
temporal operator, or using ``G`` inside the core, is rejected because the
result would not be co-safe.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import formula as fm

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n|;)
  | (?P<num>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?(?![A-Za-z_]))
  | (?P<name>[A-Za-z_][A-Za-z0-9_\-]*)
  | (?P<op>[!&|():,])
    """,
    re.VERBOSE,
)

_UNARY = {"!", "F", "X", "G"}
_ATOMS = {"in", "near", "unc", "nearc"}
_CLAUSES = {"core", "always", "finally_stay"}


class ParseError(ValueError):
    def __init__(self, message: str, pos: int, text: str):
        line = text.count("\n", 0, pos) + 1
        col = pos - (text.rfind("\n", 0, pos) + 1) + 1
        super().__init__(f"{message} at line {line}, column {col}")
        self.pos = pos
        self.line = line
        self.column = col


class NotCoSafeError(ParseError):
    pass


@dataclass
class _Tok:
    kind: str
    value: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), pos))
        pos = m.end()
    toks.append(_Tok("eof", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    # token helpers
    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, msg: str, tok: _Tok | None = None, cls=ParseError):
        tok = tok or self.peek()
        raise cls(msg, tok.pos, self.text)

    def expect(self, value: str) -> _Tok:
        tok = self.take()
        if tok.value != value:
            self.error(f"expected {value!r}, found {tok.value or 'end of input'!r}", tok)
        return tok

    def skip_newlines(self):
        while self.peek().kind == "nl":
            self.take()

    # grammar
    def mission(self) -> fm.Mission:
        self.skip_newlines()
        first = self.peek()
        nxt = self.toks[self.i + 1] if self.i + 1 < len(self.toks) else None
        if not (first.value in _CLAUSES and nxt is not None and nxt.value == ":"):
            tree = self.formula()
            self.skip_newlines()
            if self.peek().kind != "eof":
                self.error(f"unexpected {self.peek().value!r}")
            return fm.Mission(core=self.lower(tree, core=True))
        core = None
        invariants = []
        terminal = None
        while self.peek().kind != "eof":
            tok = self.take()
            if tok.value not in _CLAUSES:
                self.error(f"expected a clause keyword, found {tok.value!r}", tok)
            self.expect(":")
            tree = self.formula()
            if tok.value == "core":
                if core is not None:
                    self.error("duplicate 'core' clause", tok)
                core = self.lower(tree, core=True)
            elif tok.value == "always":
                invariants.append(self.lower(tree, boolean=True))
            else:
                if terminal is not None:
                    self.error("duplicate 'finally_stay' clause", tok)
                terminal = self.lower(tree, boolean=True)
            if self.peek().kind not in ("nl", "eof"):
                self.error(f"unexpected {self.peek().value!r}")
            self.skip_newlines()
        if core is None:
            self.error("missing 'core' clause")
        return fm.Mission(
            core=core, invariants=tuple(invariants),
            terminal=fm.TRUE if terminal is None else terminal,
        )

    def formula(self):
        left = self.conj()
        while self.peek().value == "|":
            self.take()
            left = ("or", left, self.conj())
        return left

    def conj(self):
        left = self.until()
        while self.peek().value == "&":
            self.take()
            left = ("and", left, self.until())
        return left

    def until(self):
        left = self.unary()
        if self.peek().value == "U":
            tok = self.take()
            return ("U", left, self.until(), tok.pos)
        return left

    def unary(self):
        tok = self.peek()
        if tok.value in _UNARY:
            self.take()
            return (tok.value, self.unary(), tok.pos)
        return self.primary()

    def primary(self):
        tok = self.take()
        if tok.value == "(":
            inner = self.formula()
            self.expect(")")
            return inner
        if tok.kind != "name":
            self.error(f"unexpected {tok.value or 'end of input'!r}", tok)
        if tok.value == "true":
            return ("const", True)
        if tok.value == "false":
            return ("const", False)
        if tok.value in _ATOMS and self.peek().value == "(":
            return ("atom", self.atom(tok.value))
        if tok.value in {"U"} | _CLAUSES:
            self.error(f"misplaced keyword {tok.value!r}", tok)
        return ("atom", fm.Prop(tok.value))

    def atom(self, kind: str):
        self.expect("(")
        args = [self.take()]
        while self.peek().value == ",":
            self.take()
            args.append(self.take())
        self.expect(")")
        sig = {"in": "iN", "near": "iNff", "unc": "Nf", "nearc": "iNffN"}[kind]
        if len(args) != len(sig):
            self.error(f"{kind}() takes {len(sig)} arguments, got {len(args)}", args[0])
        vals = []
        for tok, s in zip(args, sig):
            if s == "i":
                if tok.kind != "num" or not re.fullmatch(r"\d+", tok.value):
                    self.error(f"expected a robot index, found {tok.value!r}", tok)
                vals.append(int(tok.value))
            elif s == "N":
                if tok.kind not in ("name", "num"):
                    self.error(f"expected an identifier, found {tok.value!r}", tok)
                vals.append(tok.value)
            else:
                if tok.kind != "num":
                    self.error(f"expected a number, found {tok.value!r}", tok)
                vals.append(float(tok.value))
        try:
            if kind == "in":
                return fm.Region(*vals)
            if kind == "near":
                _check_prob(vals[2], vals[3])
                return fm.NearLandmark(*vals)
            if kind == "unc":
                if not vals[1] > 0:
                    raise ValueError("determinant threshold must be positive")
                return fm.UncertaintyBelow(*vals)
            _check_prob(vals[2], vals[3])
            return fm.NearLandmarkClass(*vals)
        except ValueError as exc:
            self.error(str(exc), args[0])

    # lowering to canonical formulas
    def lower(self, tree, core: bool = False, boolean: bool = False, negated: bool = False):
        tag = tree[0]
        if tag == "const":
            return fm.TRUE if tree[1] != negated else fm.FALSE
        if tag == "atom":
            return fm.neg_atom(tree[1]) if negated else fm.atom(tree[1])
        if tag == "!":
            return self.lower(tree[1], core, boolean, not negated)
        if tag in ("and", "or"):
            a = self.lower(tree[1], core, boolean, negated)
            b = self.lower(tree[2], core, boolean, negated)
            if (tag == "and") != negated:
                return fm.conj(a, b)
            return fm.disj(a, b)
        pos = tree[-1]
        if boolean:
            raise ParseError("temporal operators are not allowed in Boolean clauses", pos, self.text)
        if tag == "G":
            raise NotCoSafeError("'G' is not allowed in the co-safe core", pos, self.text)
        if negated:
            raise NotCoSafeError(f"negated '{tag}' is not co-safe", pos, self.text)
        if tag == "X":
            return fm.next_(self.lower(tree[1], core, boolean))
        if tag == "F":
            return fm.eventually(self.lower(tree[1], core, boolean))
        return fm.until(self.lower(tree[1], core, boolean), self.lower(tree[2], core, boolean))


def _check_prob(r: float, delta: float) -> None:
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def parse(text: str) -> fm.Mission:
    """Parse mission text into a :class:`~semplan.ltl.formula.Mission`."""
    return _Parser(text).mission()


def parse_formula(text: str) -> fm.Formula:
    """Parse a bare co-safe formula (no clause keywords)."""
    return parse(text).core
