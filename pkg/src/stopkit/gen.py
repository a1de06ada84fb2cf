"""Deterministic random MiniScript programs for differential testing.

Generated programs always terminate, never hit runtime errors by
construction, and print enough intermediate state to make divergence
between the plain interpreter and the instrumented driver observable.
The STOPKIT_SEED environment variable pins the seed.
"""

from __future__ import annotations

import os
import random

DEFAULT_SEED = 20240811

FEATURES = ("closures", "boxing", "exceptions", "finally_return",
            "constructors", "varargs", "implicits_num", "implicits_str")


def seed_from_env(default: int = DEFAULT_SEED) -> int:
    raw = os.environ.get("STOPKIT_SEED")
    return int(raw) if raw else default


class ProgramGenerator:
    def __init__(self, seed: int | None = None, features=FEATURES):
        self.rng = random.Random(seed_from_env() if seed is None else seed)
        self.features = set(features)
        self.counter = 0

    def fresh(self, prefix: str) -> str:
        self.counter += 1
        return f"{prefix}{self.counter}"

    # ------------------------------------------------------------ expressions

    def num_atom(self, scope) -> str:
        nums = [n for n, k in scope if k == "num"]
        if nums and self.rng.random() < 0.6:
            return self.rng.choice(nums)
        return str(self.rng.randint(-9, 20))

    def num_expr(self, scope, depth=0) -> str:
        r = self.rng.random()
        if depth > 2 or r < 0.35:
            return self.num_atom(scope)
        op = self.rng.choice(["+", "-", "*", "%", "+", "-"])
        lhs = self.num_expr(scope, depth + 1)
        rhs = self.num_expr(scope, depth + 1)
        if op == "%":
            rhs = str(self.rng.randint(2, 9))
        return f"({lhs} {op} {rhs})"

    def str_expr(self, scope) -> str:
        strs = [n for n, k in scope if k == "str"]
        base = f'"{self.rng.choice("abcdexyz")}"'
        if strs and self.rng.random() < 0.5:
            base = self.rng.choice(strs)
        if self.rng.random() < 0.5:
            return f"({base} + {self.num_atom(scope)})"
        return base

    def bool_expr(self, scope) -> str:
        op = self.rng.choice(["<", "<=", ">", ">=", "==", "!="])
        e = f"({self.num_expr(scope)} {op} {self.num_expr(scope)})"
        if self.rng.random() < 0.3:
            join = self.rng.choice(["&&", "||"])
            return f"({e} {join} {self.bool_expr(scope)})"
        return e

    # ------------------------------------------------------------- statements

    def gen(self, n_stmts: int = 12) -> str:
        lines: list[str] = []
        scope: list[tuple[str, str]] = []
        feature_pool = [f for f in FEATURES if f in self.features]
        self.rng.shuffle(feature_pool)
        for i in range(n_stmts):
            if feature_pool and self.rng.random() < 0.45:
                self.emit_feature(feature_pool.pop(), lines, scope)
            else:
                self.emit_plain(lines, scope)
        # drain the remaining requested features so coverage is guaranteed
        for f in feature_pool:
            self.emit_feature(f, lines, scope)
        lines.append(f"print({self.num_expr(scope)});")
        return "\n".join(lines) + "\n"

    def emit_plain(self, lines, scope):
        kind = self.rng.choice(["let", "if", "loop", "array", "record", "fn", "print"])
        if kind == "let":
            name = self.fresh("v")
            lines.append(f"let {name} = {self.num_expr(scope)};")
            scope.append((name, "num"))
        elif kind == "if":
            a, b = self.num_expr(scope), self.num_expr(scope)
            tgt = [n for n, k in scope if k == "num"]
            if tgt:
                t = self.rng.choice(tgt)
                lines.append(f"if ({self.bool_expr(scope)}) {{ {t} = {a}; "
                             f"print({t}); }} else {{ {t} = {b}; }}")
            else:
                lines.append(f"if ({self.bool_expr(scope)}) {{ print({a}); }}")
        elif kind == "loop":
            i = self.fresh("i")
            acc = self.fresh("acc")
            k = self.rng.randint(2, 6)
            lines.append(f"let {acc} = 0;")
            lines.append(f"let {i} = 0;")
            lines.append(f"while ({i} < {k}) {{ {acc} = {acc} + {i} * 2; "
                         f"{i} = {i} + 1; }}")
            lines.append(f"print({acc});")
            scope.append((acc, "num"))
        elif kind == "array":
            name = self.fresh("xs")
            items = ", ".join(self.num_atom(scope) for _ in range(self.rng.randint(1, 4)))
            lines.append(f"let {name} = [{items}];")
            lines.append(f"print({name}[0], {name}.length);")
            scope.append((name, "array"))
        elif kind == "record":
            name = self.fresh("o")
            lines.append(f"let {name} = {{ a: {self.num_expr(scope)}, "
                         f"b: {self.str_expr(scope)} }};")
            lines.append(f"{name}.a = {name}.a + 1;")
            lines.append(f"print({name}.a, {name}.b);")
            scope.append((name, "record"))
        elif kind == "fn":
            name = self.fresh("f")
            p = self.fresh("p")
            body = self.num_expr([(p, "num")])
            lines.append(f"function {name}({p}) {{ return {body}; }}")
            lines.append(f"print({name}({self.num_expr(scope)}));")
            scope.append((name, "fn1"))
        else:
            use = [n for n, k in scope if k in ("num", "str")]
            if use:
                lines.append(f"print({self.rng.choice(use)});")
            else:
                lines.append(f"print({self.num_expr(scope)});")

    def emit_feature(self, feature, lines, scope):
        r = self.rng
        if feature == "closures":
            mk, acc = self.fresh("mk"), self.fresh("c")
            start = r.randint(0, 5)
            lines.append(f"let {mk} = function(s) {{ "
                         f"return function(d) {{ return s + d; }}; }};")
            lines.append(f"let {acc} = {mk}({start});")
            lines.append(f"print({acc}({self.num_atom(scope)}));")
        elif feature == "boxing":
            mk, acc = self.fresh("ctr"), self.fresh("inc")
            lines.append(f"let {mk} = function(s) {{ let n = s; "
                         f"return function() {{ n = n + 1; return n; }}; }};")
            lines.append(f"let {acc} = {mk}({r.randint(0, 4)});")
            lines.append(f"print({acc}(), {acc}(), {acc}());")
        elif feature == "exceptions":
            f, e = self.fresh("th"), self.fresh("e")
            cut = r.randint(1, 5)
            lines.append(f"function {f}(x) {{ if (x > {cut}) "
                         f'{{ throw "big" + x; }} return x * 3; }}')
            lines.append(f"try {{ print({f}({r.randint(0, 9)})); }} "
                         f'catch ({e}) {{ print("caught", {e}); }}')
        elif feature == "finally_return":
            f = self.fresh("fr")
            cut = r.randint(1, 5)
            lines.append(
                f"function {f}(x) {{ try {{ if (x > {cut}) "
                f'{{ return "hi" + x; }} return "lo" + x; }} '
                f'finally {{ print("fin", x); }} }}')
            lines.append(f"print({f}({r.randint(0, 9)}));")
        elif feature == "constructors":
            c, o = self.fresh("C"), self.fresh("obj")
            lines.append(
                f"function {c}(x, y) {{ this.x = x; this.y = y; "
                f"this.sum = function() {{ return this.x + this.y; }}; }}")
            lines.append(f"let {o} = new {c}({self.num_atom(scope)}, {r.randint(0, 9)});")
            lines.append(f"print({o}.sum(), {o}.x);")
        elif feature == "varargs":
            f = self.fresh("vs")
            args = ", ".join(self.num_atom(scope) for _ in range(r.randint(2, 5)))
            lines.append(
                f"function {f}() {{ let t = 0; let j = 0; "
                f"while (j < arguments.length) {{ t = t + arguments[j]; "
                f"j = j + 1; }} return t; }}")
            lines.append(f"print({f}({args}));")
        elif feature == "implicits_num":
            o = self.fresh("iv")
            v = r.randint(1, 9)
            lines.append(f"let {o} = {{ valueOf: function() {{ return {v}; }} }};")
            op = r.choice(["-", "*", "<"])
            lines.append(f"print({o} {op} {r.randint(1, 5)});")
        elif feature == "implicits_str":
            o = self.fresh("sv")
            lines.append(f'let {o} = {{ toString: function() '
                         f'{{ return "s{r.randint(0, 9)}"; }} }};')
            lines.append(f'print("x" + {o});')


def generate_corpus(count: int, seed: int | None = None,
                    features=FEATURES) -> list[str]:
    base = seed_from_env() if seed is None else seed
    return [ProgramGenerator(base + i, features).gen() for i in range(count)]
