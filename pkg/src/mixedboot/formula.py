"""lme4-style model formula parsing.

Grammar: ``response '~' fixed-expr '+' '(' rand-expr '|' cluster ')'``.
Fixed factors are names, ``a:b`` interactions, or ``a*b`` products
(expanded to ``a + b + a:b``); ``0 +`` or ``- 1`` removes the
intercept.  The random part allows ``1``, one or more slope names, and
``0 +`` to drop the random intercept.  Exactly one random group is
accepted, variables must be plain column names (no transformations),
and higher-order ``*`` chains are rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

__all__ = ["FormulaError", "ModelFormula", "parse_formula"]


class FormulaError(ValueError):
    """Formula syntax or semantics error, annotated with a position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


# A fixed-effect term is a tuple of column names; () is the intercept.
Term = tuple[str, ...]


@dataclass(frozen=True)
class ModelFormula:
    response: str
    fixed_terms: tuple[Term, ...]
    random_intercept: bool
    random_slopes: tuple[str, ...]
    cluster: str

    @property
    def variables(self) -> tuple[str, ...]:
        """All data columns the formula references (response and cluster excluded)."""
        seen: dict[str, None] = {}
        for term in self.fixed_terms:
            for name in term:
                seen.setdefault(name)
        for name in self.random_slopes:
            seen.setdefault(name)
        return tuple(seen)

    def fixed_labels(self) -> tuple[str, ...]:
        return tuple("(Intercept)" if not t else ":".join(t) for t in self.fixed_terms)

    def random_labels(self) -> tuple[str, ...]:
        labels = ("(Intercept)",) if self.random_intercept else ()
        return labels + self.random_slopes

    def render(self) -> str:
        """Canonical text; reparsing it yields an equal ModelFormula."""
        parts = []
        has_intercept = () in self.fixed_terms
        if not has_intercept:
            parts.append("0")
        for term in self.fixed_terms:
            parts.append("1" if not term else ":".join(term))
        rand = list(self.random_slopes)
        if self.random_intercept:
            rand.insert(0, "1")
        else:
            rand.insert(0, "0")
        fixed = " + ".join(parts)
        return f"{self.response} ~ {fixed} + ({' + '.join(rand)}|{self.cluster})"


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<name>[A-Za-z_.][A-Za-z0-9_.]*)|(?P<num>\d+)|(?P<sym>[~+*:()|\-])|(?P<bad>\S))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        pos = m.start(m.lastgroup)
        if m.lastgroup == "bad":
            raise FormulaError(f"unknown token {m.group('bad')!r}", pos)
        tokens.append((m.lastgroup, m.group(m.lastgroup), pos))
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def advance(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str, value: str | None = None) -> tuple[str, str, int]:
        tok = self.advance()
        if tok[0] != kind or (value is not None and tok[1] != value):
            want = value if value is not None else kind
            raise FormulaError(f"expected {want!r}, found {tok[1] or 'end of input'!r}", tok[2])
        return tok

    def parse(self) -> ModelFormula:
        kind, response, pos = self.advance()
        if kind != "name":
            raise FormulaError("expected response name", pos)
        self.expect("sym", "~")

        intercept_removed = False
        mains: list[str] = []
        interactions: list[Term] = []
        random: tuple[bool, tuple[str, ...], str] | None = None
        seen: set[frozenset[str]] = set()

        while True:
            kind, value, pos = self.peek()
            if kind == "sym" and value == "(":
                if random is not None:
                    raise FormulaError("more than one random-effects group", pos)
                random = self._parse_random()
            elif kind == "sym" and value == "-":
                self.advance()
                self.expect("num", "1")
                intercept_removed = True
            elif kind == "num" and value == "0":
                self.advance()
                intercept_removed = True
            elif kind == "num" and value == "1":
                self.advance()
            elif kind == "name":
                self._parse_factor(mains, interactions, seen)
            else:
                raise FormulaError(f"expected a term, found {value or 'end of input'!r}", pos)

            kind, value, pos = self.peek()
            if kind == "end":
                break
            if kind == "sym" and value == "+":
                self.advance()
                continue
            if kind == "sym" and value == "-":
                continue  # '- 1' is consumed as the next term
            raise FormulaError(f"expected '+' or end of formula, found {value!r}", pos)

        if random is None:
            raise FormulaError("formula requires one (…|cluster) random group", len(self.text))
        random_intercept, slopes, cluster = random
        if cluster == response:
            raise FormulaError("cluster variable must differ from the response", 0)

        fixed_terms: list[Term] = []
        if not intercept_removed:
            fixed_terms.append(())
        fixed_terms.extend((m,) for m in mains)
        fixed_terms.extend(interactions)
        for term in interactions:
            for name in term:
                if name not in mains:
                    raise FormulaError(
                        f"interaction {':'.join(term)!r} references {name!r} "
                        "without a matching main effect", 0,
                    )
        return ModelFormula(
            response=response,
            fixed_terms=tuple(fixed_terms),
            random_intercept=random_intercept,
            random_slopes=slopes,
            cluster=cluster,
        )

    def _add_main(self, name: str, pos: int, mains: list[str], seen: set[frozenset[str]]):
        key = frozenset((name,))
        if key in seen:
            raise FormulaError(f"duplicate term {name!r}", pos)
        seen.add(key)
        mains.append(name)

    def _parse_factor(self, mains, interactions, seen):
        kind, first, pos = self.advance()
        nxt = self.peek()
        if nxt[0] == "sym" and nxt[1] == "*":
            self.advance()
            _, second, pos2 = self.expect("name")
            after = self.peek()
            if after[0] == "sym" and after[1] in ("*", ":"):
                raise FormulaError(
                    "only two-way '*' products are supported; expand longer "
                    "chains with explicit ':' terms", after[2],
                )
            for name, p in ((first, pos), (second, pos2)):
                if frozenset((name,)) not in seen:
                    self._add_main(name, p, mains, seen)
            key = frozenset((first, second))
            if key in seen:
                raise FormulaError(f"duplicate term {first}:{second}", pos)
            seen.add(key)
            interactions.append((first, second))
            return
        if nxt[0] == "sym" and nxt[1] == ":":
            names = [first]
            while self.peek()[0] == "sym" and self.peek()[1] == ":":
                self.advance()
                _, name, _ = self.expect("name")
                names.append(name)
            key = frozenset(names)
            if len(key) != len(names):
                raise FormulaError(f"repeated name in interaction {':'.join(names)!r}", pos)
            if key in seen:
                raise FormulaError(f"duplicate term {':'.join(names)!r}", pos)
            seen.add(key)
            interactions.append(tuple(names))
            return
        self._add_main(first, pos, mains, seen)

    def _parse_random(self) -> tuple[bool, tuple[str, ...], str]:
        self.expect("sym", "(")
        intercept = True
        slopes: list[str] = []
        while True:
            kind, value, pos = self.advance()
            if kind == "num" and value == "0":
                intercept = False
            elif kind == "num" and value == "1":
                pass
            elif kind == "name":
                if value in slopes:
                    raise FormulaError(f"duplicate random slope {value!r}", pos)
                slopes.append(value)
            else:
                raise FormulaError(
                    f"expected a random-effects term, found {value or 'end of input'!r}", pos
                )
            kind, value, pos = self.peek()
            if kind == "sym" and value == "+":
                self.advance()
                continue
            if kind == "sym" and value == "|":
                self.advance()
                break
            raise FormulaError(f"expected '+' or '|', found {value or 'end of input'!r}", pos)
        _, cluster, _ = self.expect("name")
        self.expect("sym", ")")
        if not intercept and not slopes:
            raise FormulaError("random group has neither intercept nor slopes", 0)
        return intercept, tuple(slopes), cluster


def parse_formula(text: str) -> ModelFormula:
    """Parse a formula string; raises FormulaError on any non-matching input."""
    return _Parser(text).parse()
