"""Recursive-descent parser for the model-formula language.

    formula  := NAME '~' sum
    sum      := product ('+' product)*
    product  := inter ('*' inter)*
    inter    := atom (':' atom)*
    atom     := NAME | 'ns' '(' NAME ',' INT ')' | '1' | '(' sum ')'

``a*b`` expands to ``a + b + a:b``; chains expand to every subset
interaction. The term list is deduplicated (``a:b`` equals ``b:a``) and
ordered by interaction degree, keeping first-appearance order within a degree.
"""
import re
from dataclasses import dataclass
from typing import List, Optional

from app.core.exceptions import FormulaError
from app.formula.schemas import Factor, FormulaSpec, Term

FUNCTIONS = {"ns"}

_TOKEN = re.compile(r"\s*(?:(?P<name>[A-Za-z_.][A-Za-z0-9_.]*)|(?P<number>\d+(?:\.\d*)?)|(?P<op>[~+*:(),]))")


@dataclass(frozen=True)
class Token:
    kind: str
    value: str
    pos: int


def tokenize(text: str) -> List[Token]:
    tokens: List[Token] = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise FormulaError(f"Unexpected character '{text[bad]}' at position {bad}", position=bad, formula=text)
        kind = m.lastgroup
        tokens.append(Token(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(Token("end", "", len(text)))
    return tokens


def _merge(left: Term, right: Term) -> Term:
    merged = list(left)
    for factor in right:
        if factor not in merged:
            merged.append(factor)
    return tuple(merged)


def _interact(left: List[Term], right: List[Term]) -> List[Term]:
    return [_merge(a, b) for a in left for b in right]


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.i]

    def error(self, message: str, token: Optional[Token] = None) -> FormulaError:
        token = token or self.current
        return FormulaError(f"{message} at position {token.pos}", position=token.pos, formula=self.text)

    def expect(self, value: str) -> Token:
        tok = self.current
        if tok.value != value or tok.kind not in ("op",):
            found = tok.value or "end of formula"
            raise self.error(f"Expected '{value}' but found '{found}'")
        self.i += 1
        return tok

    def parse(self) -> FormulaSpec:
        tok = self.current
        if tok.kind != "name":
            raise self.error("Formula must start with a response name")
        self.i += 1
        self.expect("~")
        terms = self.sum()
        if self.current.kind != "end":
            raise self.error(f"Unexpected '{self.current.value}'")
        return FormulaSpec(response=tok.value, terms=_canonical(terms), text=self.text)

    def sum(self) -> List[Term]:
        terms = self.product()
        while self.current.kind == "op" and self.current.value == "+":
            self.i += 1
            terms = terms + self.product()
        return terms

    def product(self) -> List[Term]:
        terms = self.inter()
        while self.current.kind == "op" and self.current.value == "*":
            self.i += 1
            right = self.inter()
            terms = terms + right + _interact(terms, right)
        return terms

    def inter(self) -> List[Term]:
        terms = self.atom()
        while self.current.kind == "op" and self.current.value == ":":
            self.i += 1
            terms = _interact(terms, self.atom())
        return terms

    def atom(self) -> List[Term]:
        tok = self.current
        if tok.kind == "number":
            if tok.value != "1":
                raise self.error(f"Unexpected number '{tok.value}'")
            self.i += 1
            return [()]
        if tok.kind == "op" and tok.value == "(":
            self.i += 1
            terms = self.sum()
            self.expect(")")
            return terms
        if tok.kind == "name":
            self.i += 1
            nxt = self.current
            if nxt.kind == "op" and nxt.value == "(":
                if tok.value not in FUNCTIONS:
                    raise self.error(f"Unknown function '{tok.value}'", tok)
                return [(self.spline_call(),)]
            return [(Factor(tok.value),)]
        found = tok.value or "end of formula"
        raise self.error(f"Expected a term but found '{found}'")

    def spline_call(self) -> Factor:
        self.expect("(")
        var = self.current
        if var.kind != "name":
            raise self.error("ns() expects a variable name")
        self.i += 1
        self.expect(",")
        df_tok = self.current
        if df_tok.kind != "number":
            raise self.error("ns() expects an integer degrees of freedom")
        if "." in df_tok.value:
            raise self.error(f"Spline degrees of freedom must be an integer, got '{df_tok.value}'", df_tok)
        df = int(df_tok.value)
        if df < 1:
            raise self.error(f"Spline degrees of freedom must be positive, got {df}", df_tok)
        self.i += 1
        self.expect(")")
        return Factor(var.value, df)


def _canonical(terms: List[Term]) -> tuple:
    seen = {}
    for term in terms:
        if not term:
            continue
        seen.setdefault(frozenset(term), term)
    ordered = list(seen.values())
    ordered.sort(key=len)  # stable: first appearance within a degree
    return tuple(ordered)


def parse_formula(text: str) -> FormulaSpec:
    if not isinstance(text, str) or not text.strip():
        raise FormulaError("Formula is empty", position=0, formula=text if isinstance(text, str) else None)
    return _Parser(text).parse()
