"""Independent oracle for control-operator semantics.

A tiny substitution-free CPS evaluator for a micro-calculus (numbers, unary
lambdas, +, <, if, sequencing, mutable boxes, print, control). Continuations
are host closures, so capture/discard/multi-shot behavior falls out of CPS
by construction, with no shared code or technique with the main runtime.

Terms (tuples):
    ("num", n) ("var", x) ("lam", x, body) ("app", f, a)
    ("+", a, b) ("<", a, b) ("if", c, t, e) ("seq", a, b, ...)
    ("box", e) ("unbox", e) ("setbox", b, e)
    ("print", e) ("control", x, body)
"""


class _Kont:
    __slots__ = ("fn",)

    def __init__(self, fn):
        self.fn = fn


class _Clo:
    __slots__ = ("param", "body", "env")

    def __init__(self, param, body, env):
        self.param = param
        self.body = body
        self.env = env


def run(term):
    """Evaluate a term; returns (result, printed_outputs)."""
    outputs = []
    result = []

    def halt(v):
        result.append(v)
        return ("halt",)

    todo = [lambda: ev(term, {}, halt)]

    def ev(t, env, k):
        tag = t[0]
        if tag == "num":
            return lambda: k(t[1])
        if tag == "var":
            return lambda: k(env[t[1]])
        if tag == "lam":
            return lambda: k(_Clo(t[1], t[2], env))
        if tag == "app":
            return ev(t[1], env, lambda f:
                      ev(t[2], env, lambda a: apply(f, a, k)))
        if tag == "+":
            return ev(t[1], env, lambda a:
                      ev(t[2], env, lambda b: (lambda: k(a + b))))
        if tag == "<":
            return ev(t[1], env, lambda a:
                      ev(t[2], env, lambda b: (lambda: k(1 if a < b else 0))))
        if tag == "if":
            return ev(t[1], env, lambda c:
                      ev(t[2] if c != 0 else t[3], env, k))
        if tag == "seq":
            rest = t[1:]

            def chain(i):
                if i == len(rest) - 1:
                    return ev(rest[i], env, k)
                return ev(rest[i], env, lambda _v, i=i: chain(i + 1))

            return chain(0)
        if tag == "box":
            return ev(t[1], env, lambda v: (lambda: k([v])))
        if tag == "unbox":
            return ev(t[1], env, lambda b: (lambda: k(b[0])))
        if tag == "setbox":
            def set_it(b):
                return ev(t[2], env, lambda v: (lambda: (b.__setitem__(0, v), k(v))[1]))
            return ev(t[1], env, set_it)
        if tag == "print":
            return ev(t[1], env, lambda v: (lambda: (outputs.append(v), k(v))[1]))
        if tag == "control":
            # bind the current continuation; run the body in the empty one
            env2 = dict(env)
            env2[t[1]] = _Kont(lambda v, kk=k: (lambda: kk(v)))
            return ev(t[2], env2, halt)
        raise ValueError(f"bad term {t!r}")

    def apply(f, a, k):
        if isinstance(f, _Kont):
            return f.fn(a)  # aborts: the pending k is dropped
        if isinstance(f, _Clo):
            env2 = dict(f.env)
            env2[f.param] = a
            return ev(f.body, env2, k)
        raise ValueError("cannot apply a non-function")

    step = todo.pop()
    while True:
        step = step()
        if isinstance(step, tuple) and step[0] == "halt":
            break
    return result[-1], outputs
