"""Recursive-descent parser producing a located MiniScript AST."""

from __future__ import annotations

from stopkit import ast
from stopkit.errors import MsSyntaxError
from stopkit.lexer import Token, tokenize

# binary operator precedence, loosest first
_LEVELS = [
    ["||"],
    ["&&"],
    ["==", "!="],
    ["<", "<=", ">", ">="],
    ["+", "-"],
    ["*", "/", "%"],
]


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.pos = 0
        self.fn_depth = 0

    # ---------------------------------------------------------- token helpers

    def peek(self) -> Token:
        return self.toks[self.pos]

    def at(self, kind, text=None) -> bool:
        t = self.peek()
        return t.kind == kind and (text is None or t.text == text)

    def take(self) -> Token:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect(self, kind, text=None) -> Token:
        t = self.peek()
        if not self.at(kind, text):
            want = text if text is not None else kind
            got = t.text or t.kind
            raise MsSyntaxError(f"expected {want!r}, found {got!r}", t.loc.line, t.loc.col)
        return self.take()

    # ------------------------------------------------------------- statements

    def program(self) -> ast.Program:
        stmts = []
        while not self.at("eof"):
            stmts.append(self.statement())
        return ast.Program(stmts)

    def statement(self) -> ast.Node:
        t = self.peek()
        if t.kind == "keyword":
            if t.text == "let":
                return self.let_stmt()
            if t.text == "function":
                return self.func_decl()
            if t.text == "if":
                return self.if_stmt()
            if t.text == "while":
                return self.while_stmt()
            if t.text == "return":
                return self.return_stmt()
            if t.text == "throw":
                return self.throw_stmt()
            if t.text == "try":
                return self.try_stmt()
        if self.at("punct", "{"):
            return self.block()
        return self.expr_or_assign_stmt()

    def let_stmt(self) -> ast.Let:
        loc = self.expect("keyword", "let").loc
        name = self.ident_token().text
        self.expect("punct", "=")
        init = self.expression()
        self.expect("punct", ";")
        return ast.Let(loc, name, init)

    def ident_token(self) -> Token:
        t = self.peek()
        if t.kind != "ident":
            raise MsSyntaxError(f"expected identifier, found {t.text or t.kind!r}",
                                t.loc.line, t.loc.col)
        return self.take()

    def func_decl(self) -> ast.FuncDecl:
        loc = self.expect("keyword", "function").loc
        name = self.ident_token().text
        params = self.param_list()
        body = self.function_body()
        return ast.FuncDecl(loc, ast.Function(loc, params, body, name=name))

    def param_list(self) -> list[str]:
        self.expect("punct", "(")
        params = []
        if not self.at("punct", ")"):
            while True:
                params.append(self.ident_token().text)
                if not self.at("punct", ","):
                    break
                self.take()
        self.expect("punct", ")")
        return params

    def function_body(self) -> ast.Block:
        self.fn_depth += 1
        body = self.block()
        self.fn_depth -= 1
        return body

    def block(self) -> ast.Block:
        loc = self.expect("punct", "{").loc
        stmts = []
        while not self.at("punct", "}"):
            if self.at("eof"):
                raise MsSyntaxError("expected '}'", self.peek().loc.line, self.peek().loc.col)
            stmts.append(self.statement())
        self.expect("punct", "}")
        return ast.Block(loc, stmts)

    def if_stmt(self) -> ast.If:
        loc = self.expect("keyword", "if").loc
        self.expect("punct", "(")
        cond = self.expression()
        self.expect("punct", ")")
        then = self.block()
        orelse = None
        if self.at("keyword", "else"):
            self.take()
            if self.at("keyword", "if"):
                nested = self.if_stmt()
                orelse = ast.Block(nested.loc, [nested])
            else:
                orelse = self.block()
        return ast.If(loc, cond, then, orelse)

    def while_stmt(self) -> ast.While:
        loc = self.expect("keyword", "while").loc
        self.expect("punct", "(")
        cond = self.expression()
        self.expect("punct", ")")
        body = self.block()
        return ast.While(loc, cond, body)

    def return_stmt(self) -> ast.Return:
        t = self.expect("keyword", "return")
        if self.fn_depth == 0:
            raise MsSyntaxError("'return' outside of a function", t.loc.line, t.loc.col)
        value = None
        if not self.at("punct", ";"):
            value = self.expression()
        self.expect("punct", ";")
        return ast.Return(t.loc, value)

    def throw_stmt(self) -> ast.Throw:
        loc = self.expect("keyword", "throw").loc
        value = self.expression()
        self.expect("punct", ";")
        return ast.Throw(loc, value)

    def try_stmt(self) -> ast.Try:
        loc = self.expect("keyword", "try").loc
        body = self.block()
        catch_name = None
        handler = None
        finalbody = None
        if self.at("keyword", "catch"):
            self.take()
            self.expect("punct", "(")
            catch_name = self.ident_token().text
            self.expect("punct", ")")
            handler = self.block()
        if self.at("keyword", "finally"):
            self.take()
            finalbody = self.block()
        if handler is None and finalbody is None:
            t = self.peek()
            raise MsSyntaxError("expected 'catch' or 'finally'", t.loc.line, t.loc.col)
        return ast.Try(loc, body, catch_name, handler, finalbody)

    def expr_or_assign_stmt(self) -> ast.Node:
        loc = self.peek().loc
        e = self.expression()
        if self.at("punct", "="):
            self.take()
            value = self.expression()
            self.expect("punct", ";")
            if isinstance(e, ast.Var):
                if e.name == "this":
                    raise MsSyntaxError("cannot assign to 'this'", loc.line, loc.col)
                return ast.Assign(loc, e.name, value)
            if isinstance(e, ast.FieldGet):
                return ast.FieldSet(loc, e.obj, e.name, value)
            if isinstance(e, ast.IndexGet):
                return ast.IndexSet(loc, e.obj, e.index, value)
            raise MsSyntaxError("invalid assignment target", loc.line, loc.col)
        self.expect("punct", ";")
        return ast.ExprStmt(loc, e)

    # ------------------------------------------------------------ expressions

    def expression(self) -> ast.Node:
        return self.binary(0)

    def binary(self, level: int) -> ast.Node:
        if level >= len(_LEVELS):
            return self.unary()
        lhs = self.binary(level + 1)
        while self.peek().kind == "punct" and self.peek().text in _LEVELS[level]:
            op = self.take()
            rhs = self.binary(level + 1)
            lhs = ast.BinOp(op.loc, op.text, lhs, rhs)
        return lhs

    def unary(self) -> ast.Node:
        if self.at("punct", "-"):
            t = self.take()
            operand = self.unary()
            if isinstance(operand, ast.Num):
                return ast.Num(t.loc, -operand.value)
            return ast.BinOp(t.loc, "-", ast.Num(t.loc, 0.0), operand)
        return self.postfix()

    def postfix(self) -> ast.Node:
        e = self.primary()
        while True:
            if self.at("punct", "("):
                loc = self.take().loc
                args = self.arg_list()
                e = ast.Call(loc, e, args)
            elif self.at("punct", "."):
                self.take()
                name = self.field_name()
                e = ast.FieldGet(e.loc, e, name)
            elif self.at("punct", "["):
                self.take()
                idx = self.expression()
                self.expect("punct", "]")
                e = ast.IndexGet(e.loc, e, idx)
            else:
                return e

    def field_name(self) -> str:
        t = self.peek()
        if t.kind in ("ident", "keyword"):
            return self.take().text
        raise MsSyntaxError("expected field name", t.loc.line, t.loc.col)

    def arg_list(self) -> list[ast.Node]:
        args = []
        if not self.at("punct", ")"):
            while True:
                args.append(self.expression())
                if not self.at("punct", ","):
                    break
                self.take()
        self.expect("punct", ")")
        return args

    def primary(self) -> ast.Node:
        t = self.peek()
        if t.kind == "num":
            self.take()
            return ast.Num(t.loc, t.value)
        if t.kind == "str":
            self.take()
            return ast.Str(t.loc, t.value)
        if t.kind == "keyword":
            if t.text in ("true", "false"):
                self.take()
                return ast.Bool(t.loc, t.text == "true")
            if t.text == "null":
                self.take()
                return ast.Null(t.loc)
            if t.text == "arguments":
                self.take()
                if self.fn_depth == 0:
                    raise MsSyntaxError("'arguments' outside of a function",
                                        t.loc.line, t.loc.col)
                return ast.Arguments(t.loc)
            if t.text == "this":
                self.take()
                return ast.Var(t.loc, "this")
            if t.text == "function":
                self.take()
                name = None
                if self.peek().kind == "ident":
                    name = self.take().text  # display label, not a binding
                params = self.param_list()
                body = self.function_body()
                return ast.Function(t.loc, params, body, name=name)
            if t.text == "new":
                self.take()
                callee = self.new_callee()
                self.expect("punct", "(")
                args = self.arg_list()
                return ast.New(t.loc, callee, args)
        if t.kind == "ident":
            self.take()
            return ast.Var(t.loc, t.text)
        if self.at("punct", "("):
            self.take()
            e = self.expression()
            self.expect("punct", ")")
            return e
        if self.at("punct", "{"):
            return self.record_literal()
        if self.at("punct", "["):
            loc = self.take().loc
            items = []
            if not self.at("punct", "]"):
                while True:
                    items.append(self.expression())
                    if not self.at("punct", ","):
                        break
                    self.take()
            self.expect("punct", "]")
            return ast.Array(loc, items)
        raise MsSyntaxError(f"expected expression, found {t.text or t.kind!r}",
                            t.loc.line, t.loc.col)

    def new_callee(self) -> ast.Node:
        t = self.peek()
        if t.kind == "ident":
            e: ast.Node = ast.Var(self.take().loc, t.text)
        elif self.at("punct", "("):
            self.take()
            e = self.expression()
            self.expect("punct", ")")
        else:
            raise MsSyntaxError("expected constructor expression", t.loc.line, t.loc.col)
        while True:
            if self.at("punct", "."):
                self.take()
                e = ast.FieldGet(e.loc, e, self.field_name())
            elif self.at("punct", "["):
                self.take()
                idx = self.expression()
                self.expect("punct", "]")
                e = ast.IndexGet(e.loc, e, idx)
            else:
                return e

    def record_literal(self) -> ast.Record:
        loc = self.expect("punct", "{").loc
        pairs = []
        if not self.at("punct", "}"):
            while True:
                t = self.peek()
                if t.kind in ("ident", "keyword"):
                    key = self.take().text
                elif t.kind == "str":
                    key = self.take().value
                else:
                    raise MsSyntaxError("expected field name", t.loc.line, t.loc.col)
                self.expect("punct", ":")
                pairs.append((key, self.expression()))
                if not self.at("punct", ","):
                    break
                self.take()
        self.expect("punct", "}")
        return ast.Record(loc, pairs)


def parse(text: str) -> ast.Program:
    """Parse MiniScript source text into a located AST."""
    program = _Parser(text).program()
    program.source_text = text
    return program
