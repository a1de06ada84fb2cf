"""Tokenizer for MiniScript source text."""

from __future__ import annotations

from dataclasses import dataclass

from stopkit.ast import SourceLoc
from stopkit.errors import MsSyntaxError

KEYWORDS = {
    "let", "function", "if", "else", "while", "return", "throw",
    "try", "catch", "finally", "true", "false", "null", "new",
    "arguments", "this",
}

PUNCT = [
    "==", "!=", "<=", ">=", "&&", "||",
    "(", ")", "{", "}", "[", "]", ",", ";", ".", ":",
    "=", "<", ">", "+", "-", "*", "/", "%",
]

ESCAPES = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\"}


@dataclass
class Token:
    kind: str        # "num" | "str" | "ident" | "keyword" | "punct" | "eof"
    text: str
    value: object
    loc: SourceLoc


def tokenize(text: str) -> list[Token]:
    toks: list[Token] = []
    i, line, col = 0, 1, 0
    n = len(text)

    def loc():
        return SourceLoc(line, col)

    def advance(count=1):
        nonlocal i, line, col
        for _ in range(count):
            if i < n and text[i] == "\n":
                line += 1
                col = 0
            else:
                col += 1
            i += 1

    while i < n:
        c = text[i]
        if c in " \t\r\n":
            advance()
            continue
        if c == "/" and text.startswith("//", i):
            while i < n and text[i] != "\n":
                advance()
            continue
        start = loc()
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == "." and j + 1 < n and text[j + 1].isdigit():
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            lit = text[i:j]
            toks.append(Token("num", lit, float(lit), start))
            advance(j - i)
            continue
        if c.isalpha() or c in "_$":
            j = i
            while j < n and (text[j].isalnum() or text[j] in "_$"):
                j += 1
            word = text[i:j]
            kind = "keyword" if word in KEYWORDS else "ident"
            toks.append(Token(kind, word, word, start))
            advance(j - i)
            continue
        if c == '"':
            advance()
            out = []
            while True:
                if i >= n:
                    raise MsSyntaxError("unterminated string literal", start.line, start.col)
                ch = text[i]
                if ch == "\n":
                    raise MsSyntaxError("newline in string literal", line, col)
                if ch == '"':
                    advance()
                    break
                if ch == "\\":
                    advance()
                    if i >= n or text[i] not in ESCAPES:
                        raise MsSyntaxError("bad escape sequence", line, col)
                    out.append(ESCAPES[text[i]])
                    advance()
                else:
                    out.append(ch)
                    advance()
            toks.append(Token("str", "".join(out), "".join(out), start))
            continue
        for p in PUNCT:
            if text.startswith(p, i):
                toks.append(Token("punct", p, p, start))
                advance(len(p))
                break
        else:
            raise MsSyntaxError(f"unexpected character {c!r}", line, col)
    toks.append(Token("eof", "", None, loc()))
    return toks
