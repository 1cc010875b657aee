"""Coefficient expression language.

Grammar (EBNF, lowest precedence first)::

    expr       = additive [ cmp_op additive ] ;
    cmp_op     = "<" | "<=" | ">" | ">=" | "==" | "!=" ;
    additive   = term { ("+" | "-") term } ;
    term       = unary { ("*" | "/") unary } ;
    unary      = "-" unary | power ;
    power      = primary [ "^" unary ] ;            (* right-associative *)
    primary    = number | "pi" | coord | call | "(" expr ")" ;
    coord      = "x1" | "x2" | ... ;                (* up to the problem dimension *)
    call       = name "(" args ")" ;
    args       = expr { "," expr } | "x" ;          (* bare "x" only inside norm() *)

Functions: ``abs sqrt exp log sin cos`` (one argument), ``min max`` (two or
more), ``norm`` (the point ``x`` or one or more scalars), ``indicator``
(one argument, 1 where nonzero).  Comparisons evaluate to 1.0 or 0.0.

An evaluation error is raised for division by zero, ``log`` of a
non-positive number, ``sqrt`` of a negative number, a negative base raised to
a non-integer power, and any non-finite intermediate value.  The compiled
bytecode form used inside the path kernel returns NaN in exactly those
cases.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "ExprAST", "Num", "Coord", "PointX", "Neg", "BinOp", "Compare", "Call",
    "ParseError", "EvaluationError", "parse_expression", "to_text", "eval_field",
    "is_constant", "Program", "compile_fields",
]


class ParseError(ValueError):
    """Syntax or name error; ``offset`` is the byte offset into the source."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EvaluationError(ArithmeticError):
    pass


# -- AST ---------------------------------------------------------------------


class ExprAST:
    __slots__ = ()

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class Num(ExprAST):
    value: float


@dataclass(frozen=True)
class Coord(ExprAST):
    index: int  # zero-based


@dataclass(frozen=True)
class PointX(ExprAST):
    """The whole point ``x``; only legal as the sole argument of ``norm``."""


@dataclass(frozen=True)
class Neg(ExprAST):
    operand: ExprAST


@dataclass(frozen=True)
class BinOp(ExprAST):
    op: str
    left: ExprAST
    right: ExprAST


@dataclass(frozen=True)
class Compare(ExprAST):
    op: str
    left: ExprAST
    right: ExprAST


@dataclass(frozen=True)
class Call(ExprAST):
    name: str
    args: tuple


_UNARY_FUNCS = ("abs", "sqrt", "exp", "log", "sin", "cos", "indicator")
_VARIADIC_FUNCS = ("min", "max")
FUNCTIONS = _UNARY_FUNCS + _VARIADIC_FUNCS + ("norm",)

# -- parsing -----------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><=|>=|==|!=|[-+*/^(),<>])
    """,
    re.VERBOSE,
)


def _tokenize(text: str):
    pos = 0
    toks = []
    raw = text.encode("utf-8")
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", len(text[:pos].encode("utf-8")))
        kind = m.lastgroup
        if kind != "ws":
            toks.append((kind, m.group(), len(text[:pos].encode("utf-8"))))
        pos = m.end()
    toks.append(("end", "", len(raw)))
    return toks


class _Parser:
    def __init__(self, text: str, dim: int):
        self.toks = _tokenize(text)
        self.i = 0
        self.dim = dim

    def peek(self):
        return self.toks[self.i]

    def advance(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        tok = self.advance()
        if tok[1] != value:
            found = "end of input" if tok[0] == "end" else repr(tok[1])
            raise ParseError(f"expected {value!r}, found {found}", tok[2])
        return tok

    def parse(self) -> ExprAST:
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected {tok[1]!r}", tok[2])
        return node

    def expr(self) -> ExprAST:
        left = self.additive()
        tok = self.peek()
        if tok[1] in ("<", "<=", ">", ">=", "==", "!="):
            self.advance()
            right = self.additive()
            nxt = self.peek()
            if nxt[1] in ("<", "<=", ">", ">=", "==", "!="):
                raise ParseError("comparisons do not chain", nxt[2])
            return Compare(tok[1], left, right)
        return left

    def additive(self) -> ExprAST:
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> ExprAST:
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> ExprAST:
        if self.peek()[1] == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> ExprAST:
        base = self.primary()
        if self.peek()[1] == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def primary(self) -> ExprAST:
        kind, value, off = self.advance()
        if kind == "num":
            return Num(float(value))
        if kind == "name":
            if self.peek()[1] == "(":
                return self.call(value, off)
            if value == "pi":
                return Call("pi", ())
            m = re.fullmatch(r"x([1-9]\d*)", value)
            if m:
                k = int(m.group(1))
                if k > self.dim:
                    raise ParseError(f"unknown identifier {value!r} (dimension is {self.dim})", off)
                return Coord(k - 1)
            if value == "x":
                raise ParseError("bare 'x' is only allowed as the argument of norm()", off)
            raise ParseError(f"unknown identifier {value!r}", off)
        if value == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(value)
        raise ParseError(f"unexpected {found}", off)

    def call(self, name: str, off: int) -> ExprAST:
        if name not in FUNCTIONS:
            raise ParseError(f"unknown function {name!r}", off)
        self.expect("(")
        args = []
        if name == "norm" and self.peek()[1] == "x" and self.toks[self.i + 1][1] == ")":
            self.advance()
            args.append(PointX())
        elif self.peek()[1] != ")":
            args.append(self.expr())
            while self.peek()[1] == ",":
                self.advance()
                args.append(self.expr())
        self.expect(")")
        n = len(args)
        if name in _UNARY_FUNCS and n != 1:
            raise ParseError(f"{name}() takes exactly 1 argument, got {n}", off)
        if name in _VARIADIC_FUNCS and n < 2:
            raise ParseError(f"{name}() takes at least 2 arguments, got {n}", off)
        if name == "norm" and n < 1:
            raise ParseError("norm() takes at least 1 argument, got 0", off)
        return Call(name, tuple(args))


def parse_expression(text: str, dim: int) -> ExprAST:
    """Parse ``text`` into an AST over coordinates ``x1..x{dim}``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if not text or not text.strip():
        raise ParseError("empty expression", 0)
    return _Parser(text, dim).parse()


# -- printing ----------------------------------------------------------------


def to_text(node: ExprAST) -> str:
    """Fully parenthesised source text; ``parse_expression(to_text(t)) == t``."""
    if isinstance(node, Num):
        if node.value < 0 or not math.isfinite(node.value):
            raise ValueError("only finite nonnegative literals are printable")
        return repr(float(node.value))
    if isinstance(node, Coord):
        return f"x{node.index + 1}"
    if isinstance(node, PointX):
        return "x"
    if isinstance(node, Neg):
        return f"(-{to_text(node.operand)})"
    if isinstance(node, (BinOp, Compare)):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Call):
        if node.name == "pi":
            return "pi"
        return f"{node.name}({', '.join(to_text(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


# -- tree evaluation -----------------------------------------------------------


def _ok(v: float) -> float:
    if not math.isfinite(v):
        raise EvaluationError("non-finite intermediate value")
    return v


def _pow(a: float, b: float) -> float:
    if a < 0 and b != math.floor(b):
        raise EvaluationError("negative base with non-integer exponent")
    if a == 0 and b < 0:
        raise EvaluationError("division by zero in power")
    try:
        return math.pow(a, b)
    except OverflowError:
        raise EvaluationError("overflow in power") from None


def _eval(node: ExprAST, x) -> float:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Coord):
        return float(x[node.index])
    if isinstance(node, Neg):
        return -_eval(node.operand, x)
    if isinstance(node, BinOp):
        a = _eval(node.left, x)
        b = _eval(node.right, x)
        if node.op == "+":
            return _ok(a + b)
        if node.op == "-":
            return _ok(a - b)
        if node.op == "*":
            return _ok(a * b)
        if node.op == "/":
            if b == 0:
                raise EvaluationError("division by zero")
            return _ok(a / b)
        return _ok(_pow(a, b))
    if isinstance(node, Compare):
        a = _eval(node.left, x)
        b = _eval(node.right, x)
        return float({"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b, "==": a == b, "!=": a != b}[node.op])
    if isinstance(node, Call):
        name = node.name
        if name == "pi":
            return math.pi
        if name == "norm":
            if isinstance(node.args[0], PointX):
                vals = [float(v) for v in x]
            else:
                vals = [_eval(a, x) for a in node.args]
            return _ok(math.sqrt(sum(v * v for v in vals)))
        vals = [_eval(a, x) for a in node.args]
        if name == "min":
            return min(vals)
        if name == "max":
            return max(vals)
        v = vals[0]
        if name == "abs":
            return abs(v)
        if name == "sqrt":
            if v < 0:
                raise EvaluationError("sqrt of a negative number")
            return math.sqrt(v)
        if name == "exp":
            try:
                return _ok(math.exp(v))
            except OverflowError:
                raise EvaluationError("overflow in exp") from None
        if name == "log":
            if v <= 0:
                raise EvaluationError("log of a non-positive number")
            return math.log(v)
        if name == "sin":
            return math.sin(v)
        if name == "cos":
            return math.cos(v)
        if name == "indicator":
            return 1.0 if v != 0 else 0.0
    raise TypeError(f"cannot evaluate {node!r}")


def eval_field(ast: ExprAST, x) -> float:
    """Evaluate ``ast`` at the point ``x``; raises :class:`EvaluationError`."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise EvaluationError("evaluation point must be finite")
    return float(_eval(ast, x))


def is_constant(ast: ExprAST) -> float | None:
    """The value of a coordinate-free expression, else None."""
    def free(node):
        if isinstance(node, (Coord, PointX)):
            return False
        for child in _children(node):
            if not free(child):
                return False
        return True

    if not free(ast):
        return None
    try:
        return eval_field(ast, np.zeros(1))
    except EvaluationError:
        return None


def _children(node):
    if isinstance(node, Neg):
        return (node.operand,)
    if isinstance(node, (BinOp, Compare)):
        return (node.left, node.right)
    if isinstance(node, Call):
        return node.args
    return ()


# -- bytecode ----------------------------------------------------------------

OP_CONST, OP_COORD, OP_NEG = 0, 1, 2
OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW = 3, 4, 5, 6, 7
OP_ABS, OP_SQRT, OP_EXP, OP_LOG, OP_SIN, OP_COS, OP_IND = 8, 9, 10, 11, 12, 13, 14
OP_MIN, OP_MAX, OP_NORMX, OP_NORM = 15, 16, 17, 18
OP_LT, OP_LE, OP_GT, OP_GE, OP_EQ, OP_NE = 19, 20, 21, 22, 23, 24

_BIN = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV, "^": OP_POW}
_CMP = {"<": OP_LT, "<=": OP_LE, ">": OP_GT, ">=": OP_GE, "==": OP_EQ, "!=": OP_NE}
_FN = {"abs": OP_ABS, "sqrt": OP_SQRT, "exp": OP_EXP, "log": OP_LOG, "sin": OP_SIN,
       "cos": OP_COS, "indicator": OP_IND, "min": OP_MIN, "max": OP_MAX, "norm": OP_NORM}


def _emit(node: ExprAST, code: list, arg: list) -> tuple[int, int]:
    """Append postfix code for ``node``; returns (depth after, max depth)."""
    if isinstance(node, Num):
        code.append(OP_CONST); arg.append(node.value)
        return 1, 1
    if isinstance(node, Coord):
        code.append(OP_COORD); arg.append(float(node.index))
        return 1, 1
    if isinstance(node, Neg):
        _, m = _emit(node.operand, code, arg)
        code.append(OP_NEG); arg.append(0.0)
        return 1, m
    if isinstance(node, (BinOp, Compare)):
        _, m1 = _emit(node.left, code, arg)
        _, m2 = _emit(node.right, code, arg)
        code.append(_BIN[node.op] if isinstance(node, BinOp) else _CMP[node.op]); arg.append(0.0)
        return 1, max(m1, 1 + m2)
    if isinstance(node, Call):
        if node.name == "pi":
            code.append(OP_CONST); arg.append(math.pi)
            return 1, 1
        if node.name == "norm" and isinstance(node.args[0], PointX):
            code.append(OP_NORMX); arg.append(0.0)
            return 1, 1
        m = 0
        for k, a in enumerate(node.args):
            _, mk = _emit(a, code, arg)
            m = max(m, k + mk)
        code.append(_FN[node.name]); arg.append(float(len(node.args)))
        return 1, m
    raise TypeError(f"cannot compile {node!r}")


@dataclass(frozen=True)
class Program:
    """Several expressions packed into one bytecode array.

    Field ``k`` occupies ``code[table[k, 0]:table[k, 1]]``.
    """

    code: np.ndarray
    arg: np.ndarray
    table: np.ndarray
    stack_size: int

    def eval(self, k: int, x) -> float:
        """Evaluate field ``k`` at one point; NaN signals an evaluation error."""
        stack = np.empty(self.stack_size)
        return vm_eval(self.code, self.arg, self.table[k, 0], self.table[k, 1],
                       np.asarray(x, dtype=float), stack)

    def eval_many(self, k: int, points) -> np.ndarray:
        pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
        return _vm_eval_many(self.code, self.arg, self.table[k, 0], self.table[k, 1], pts, self.stack_size)


def compile_fields(fields) -> Program:
    code: list = []
    arg: list = []
    table = []
    depth = 1
    for f in fields:
        start = len(code)
        _, m = _emit(f, code, arg)
        table.append((start, len(code)))
        depth = max(depth, m)
    return Program(np.asarray(code, dtype=np.int64), np.asarray(arg, dtype=np.float64),
                   np.asarray(table, dtype=np.int64).reshape(-1, 2), depth)


@njit(cache=True, nogil=True)
def vm_eval(code, arg, start, end, x, stack):
    """Run one compiled field at point ``x``.  Returns NaN on any evaluation error."""
    # single exit and no np.isfinite: both keep the call cheap inside the path kernel
    sp = 0
    ok = True
    for i in range(start, end):
        op = code[i]
        if op == OP_CONST:
            stack[sp] = arg[i]
            sp += 1
        elif op == OP_COORD:
            stack[sp] = x[np.int64(arg[i])]
            sp += 1
        elif op == OP_NORMX:
            s = 0.0
            for j in range(x.shape[0]):
                s += x[j] * x[j]
            stack[sp] = math.sqrt(s)
            sp += 1
        elif op == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op <= OP_POW:
            b = stack[sp - 1]
            a = stack[sp - 2]
            sp -= 1
            r = 0.0
            if op == OP_ADD:
                r = a + b
            elif op == OP_SUB:
                r = a - b
            elif op == OP_MUL:
                r = a * b
            elif op == OP_DIV:
                if b == 0.0:
                    ok = False
                else:
                    r = a / b
            else:
                if (a < 0.0 and b != math.floor(b)) or (a == 0.0 and b < 0.0):
                    ok = False
                else:
                    r = a ** b
            stack[sp - 1] = r
        elif op <= OP_IND:
            v = stack[sp - 1]
            r = 0.0
            if op == OP_ABS:
                r = abs(v)
            elif op == OP_SQRT:
                if v < 0.0:
                    ok = False
                else:
                    r = math.sqrt(v)
            elif op == OP_EXP:
                r = math.exp(v) if v < 709.0 else np.inf
            elif op == OP_LOG:
                if v <= 0.0:
                    ok = False
                else:
                    r = math.log(v)
            elif op == OP_SIN:
                r = math.sin(v) if v - v == 0.0 else np.nan
            elif op == OP_COS:
                r = math.cos(v) if v - v == 0.0 else np.nan
            else:
                r = 1.0 if v != 0.0 else 0.0
            stack[sp - 1] = r
        elif op <= OP_NORM:
            n = np.int64(arg[i])
            base = sp - n
            r = stack[base]
            if op == OP_MIN:
                for j in range(base + 1, sp):
                    if stack[j] < r:
                        r = stack[j]
            elif op == OP_MAX:
                for j in range(base + 1, sp):
                    if stack[j] > r:
                        r = stack[j]
            else:
                r = 0.0
                for j in range(base, sp):
                    r += stack[j] * stack[j]
                r = math.sqrt(r)
            sp = base + 1
            stack[base] = r
        else:
            b = stack[sp - 1]
            a = stack[sp - 2]
            sp -= 1
            if op == OP_LT:
                c = a < b
            elif op == OP_LE:
                c = a <= b
            elif op == OP_GT:
                c = a > b
            elif op == OP_GE:
                c = a >= b
            elif op == OP_EQ:
                c = a == b
            else:
                c = a != b
            stack[sp - 1] = 1.0 if c else 0.0
        v = stack[sp - 1]
        if not ok or not (v - v == 0.0):
            ok = False
            break
    if not ok:
        return np.nan
    return stack[0]


@njit(cache=True, nogil=True)
def _vm_eval_many(code, arg, start, end, points, stack_size):
    out = np.empty(points.shape[0])
    stack = np.empty(stack_size)
    for k in range(points.shape[0]):
        out[k] = vm_eval(code, arg, start, end, points[k], stack)
    return out
