"""Camada de modelagem SDP sobre o solver de pontos interiores.

Variaveis escalares e matrizes hermitianas viram expressoes afins
(`AffineExpr`, `AffineMatrix`); LMIs complexas sao realificadas na compilacao.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from numbers import Number
from pathlib import Path
import time
from typing import Sequence

import numpy as np

from irs_seguro.interior_point import (
    INFEASIBLE,
    NUMERICAL_FAILURE,
    OPTIMAL,
    ConeDims,
    IpmOptions,
    smat,
    solve_conelp,
    svec,
    svec_indices,
)

_HERMITIAN_TOL = 1e-10


class ConicModelError(ValueError):
    pass


class AffineExpr:
    """Funcao afim real: const + sum(coef_i * x_i)."""

    __array_ufunc__ = None
    __slots__ = ("terms", "const")

    def __init__(self, terms: dict[int, float] | None = None, const: float = 0.0) -> None:
        self.terms = terms or {}
        self.const = float(const)

    @classmethod
    def lift(cls, value: AffineExpr | Number) -> AffineExpr:
        if isinstance(value, AffineExpr):
            return value
        if isinstance(value, (Number, np.number)):
            return cls(const=float(value))
        raise ConicModelError(f"termo escalar invalido: {type(value).__name__}")

    def __add__(self, other) -> AffineExpr:
        other = AffineExpr.lift(other)
        terms = dict(self.terms)
        for idx, coef in other.terms.items():
            terms[idx] = terms.get(idx, 0.0) + coef
        return AffineExpr(terms, self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> AffineExpr:
        return AffineExpr({i: -v for i, v in self.terms.items()}, -self.const)

    def __sub__(self, other) -> AffineExpr:
        return self + (-AffineExpr.lift(other))

    def __rsub__(self, other) -> AffineExpr:
        return AffineExpr.lift(other) + (-self)

    def __mul__(self, factor) -> AffineExpr:
        if not isinstance(factor, (Number, np.number)) or isinstance(factor, complex):
            raise ConicModelError("AffineExpr so multiplica por escalar real")
        factor = float(factor)
        return AffineExpr({i: v * factor for i, v in self.terms.items()}, self.const * factor)

    __rmul__ = __mul__

    def __truediv__(self, factor) -> AffineExpr:
        return self * (1.0 / float(factor))

    def times(self, matrix: np.ndarray) -> AffineMatrix:
        """Produto escalar-afim por matriz constante."""
        matrix = np.asarray(matrix, dtype=complex)
        return AffineMatrix(
            matrix.shape,
            {i: v * matrix for i, v in self.terms.items()},
            self.const * matrix,
        )

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(coef * x[idx] for idx, coef in self.terms.items())

    def coefficients(self, n_vars: int) -> np.ndarray:
        row = np.zeros(n_vars)
        for idx, coef in self.terms.items():
            row[idx] += coef
        return row


class AffineMatrix:
    """Funcao afim matricial complexa: const + sum(coef_i * x_i)."""

    __array_ufunc__ = None
    __slots__ = ("shape", "terms", "const")

    def __init__(
        self,
        shape: tuple[int, int],
        terms: dict[int, np.ndarray] | None = None,
        const: np.ndarray | None = None,
    ) -> None:
        self.shape = (int(shape[0]), int(shape[1]))
        self.terms = terms or {}
        self.const = np.zeros(self.shape, dtype=complex) if const is None else const

    @classmethod
    def lift(cls, value) -> AffineMatrix:
        if isinstance(value, AffineMatrix):
            return value
        if isinstance(value, AffineExpr):
            return value.times(np.ones((1, 1)))
        array = np.atleast_2d(np.asarray(value, dtype=complex))
        if array.ndim != 2:
            raise ConicModelError("somente matrizes 2-D sao suportadas")
        return cls(array.shape, {}, array.copy())

    def _check_shape(self, other: AffineMatrix) -> None:
        if other.shape != self.shape:
            raise ConicModelError(f"dimensoes incompativeis: {self.shape} vs {other.shape}")

    def __add__(self, other) -> AffineMatrix:
        other = AffineMatrix.lift(other)
        self._check_shape(other)
        terms = dict(self.terms)
        for idx, coef in other.terms.items():
            terms[idx] = terms[idx] + coef if idx in terms else coef
        return AffineMatrix(self.shape, terms, self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> AffineMatrix:
        return AffineMatrix(self.shape, {i: -v for i, v in self.terms.items()}, -self.const)

    def __sub__(self, other) -> AffineMatrix:
        return self + (-AffineMatrix.lift(other))

    def __rsub__(self, other) -> AffineMatrix:
        return AffineMatrix.lift(other) + (-self)

    def __mul__(self, factor) -> AffineMatrix:
        if not isinstance(factor, (Number, np.number)):
            raise ConicModelError("AffineMatrix so multiplica por escalar")
        return AffineMatrix(
            self.shape,
            {i: v * factor for i, v in self.terms.items()},
            self.const * factor,
        )

    __rmul__ = __mul__

    def __matmul__(self, right) -> AffineMatrix:
        right = np.asarray(right, dtype=complex)
        return AffineMatrix(
            (self.shape[0], right.shape[1]),
            {i: v @ right for i, v in self.terms.items()},
            self.const @ right,
        )

    def __rmatmul__(self, left) -> AffineMatrix:
        left = np.asarray(left, dtype=complex)
        return AffineMatrix(
            (left.shape[0], self.shape[1]),
            {i: left @ v for i, v in self.terms.items()},
            left @ self.const,
        )

    def __getitem__(self, key) -> AffineMatrix:
        rows, cols = key
        rows = slice(rows, rows + 1) if isinstance(rows, int) else rows
        cols = slice(cols, cols + 1) if isinstance(cols, int) else cols
        const = self.const[rows, cols]
        terms = {}
        for idx, coef in self.terms.items():
            part = coef[rows, cols]
            if np.any(part):
                terms[idx] = part
        return AffineMatrix(const.shape, terms, const)

    @property
    def H(self) -> AffineMatrix:
        return AffineMatrix(
            (self.shape[1], self.shape[0]),
            {i: v.conj().T for i, v in self.terms.items()},
            self.const.conj().T,
        )

    def trace(self) -> AffineExpr:
        return AffineExpr(
            {i: float(np.trace(v).real) for i, v in self.terms.items()},
            float(np.trace(self.const).real),
        )

    def inner(self, other: np.ndarray) -> AffineExpr:
        """Re Tr(C^H X) para C constante."""
        weight = np.asarray(other, dtype=complex).conj()
        return AffineExpr(
            {i: float(np.sum(weight * v).real) for i, v in self.terms.items()},
            float(np.sum(weight * self.const).real),
        )

    def real_entry(self, row: int, col: int) -> AffineExpr:
        return AffineExpr(
            {i: float(v[row, col].real) for i, v in self.terms.items() if v[row, col].real},
            float(self.const[row, col].real),
        )

    def imag_entry(self, row: int, col: int) -> AffineExpr:
        return AffineExpr(
            {i: float(v[row, col].imag) for i, v in self.terms.items() if v[row, col].imag},
            float(self.const[row, col].imag),
        )

    def frobenius_parts(self) -> list[AffineExpr]:
        """Vetor real cuja norma ao quadrado e ||X||_F^2 para X hermitiana."""
        n = self.shape[0]
        parts = [self.real_entry(i, i) for i in range(n)]
        for i in range(n):
            for j in range(i):
                parts.append(self.real_entry(i, j) * math.sqrt(2.0))
                parts.append(self.imag_entry(i, j) * math.sqrt(2.0))
        return parts

    def value(self, x: np.ndarray) -> np.ndarray:
        out = self.const.copy()
        for idx, coef in self.terms.items():
            out = out + coef * x[idx]
        return out

    def is_real(self) -> bool:
        if np.any(self.const.imag):
            return False
        return not any(np.any(v.imag) for v in self.terms.values())


def bmat(blocks: Sequence[Sequence[object]]) -> AffineMatrix:
    """Monta matriz em blocos; `None` indica bloco nulo."""
    heights: list[int | None] = [None] * len(blocks)
    widths: list[int | None] = [None] * len(blocks[0])
    lifted: list[list[AffineMatrix | None]] = []
    for r, row in enumerate(blocks):
        if len(row) != len(widths):
            raise ConicModelError("linhas de blocos com tamanhos diferentes")
        lifted_row: list[AffineMatrix | None] = []
        for c, item in enumerate(row):
            if item is None:
                lifted_row.append(None)
                continue
            block = AffineMatrix.lift(item)
            for sizes, pos, dim in ((heights, r, block.shape[0]), (widths, c, block.shape[1])):
                if sizes[pos] is None:
                    sizes[pos] = dim
                elif sizes[pos] != dim:
                    raise ConicModelError("blocos com dimensoes incompativeis")
            lifted_row.append(block)
        lifted.append(lifted_row)
    if any(v is None for v in heights) or any(v is None for v in widths):
        raise ConicModelError("cada linha e coluna de blocos precisa de um bloco definido")
    row_starts = np.concatenate([[0], np.cumsum(heights)]).astype(int)
    col_starts = np.concatenate([[0], np.cumsum(widths)]).astype(int)
    shape = (int(row_starts[-1]), int(col_starts[-1]))
    const = np.zeros(shape, dtype=complex)
    terms: dict[int, np.ndarray] = {}
    for r, row in enumerate(lifted):
        for c, block in enumerate(row):
            if block is None:
                continue
            rs = slice(row_starts[r], row_starts[r + 1])
            cs = slice(col_starts[c], col_starts[c + 1])
            const[rs, cs] = block.const
            for idx, coef in block.terms.items():
                if idx not in terms:
                    terms[idx] = np.zeros(shape, dtype=complex)
                terms[idx][rs, cs] = coef
    return AffineMatrix(shape, terms, const)


def embed_hermitian(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ConicModelError("matriz quadrada esperada")
    scale = max(1.0, float(np.max(np.abs(h)))) if h.size else 1.0
    if np.max(np.abs(h - h.conj().T), initial=0.0) > _HERMITIAN_TOL * scale:
        raise ConicModelError("matriz nao hermitiana")
    return _embed(h)


def _embed(h: np.ndarray) -> np.ndarray:
    re, im = h.real, h.imag
    return np.block([[re, -im], [im, re]])


@dataclass(frozen=True)
class VariableBlock:
    name: str
    kind: str
    size: int
    start: int
    count: int


@dataclass
class Lmi:
    tag: str
    matrix: AffineMatrix


@dataclass
class CompiledProblem:
    c: np.ndarray
    g: np.ndarray
    h: np.ndarray
    a: np.ndarray
    b: np.ndarray
    dims: ConeDims
    objective_offset: float
    embedded: list[bool]


class ConicProblem:
    def __init__(self, name: str = "problema") -> None:
        self.name = name
        self.n_vars = 0
        self.variables: list[VariableBlock] = []
        self.objective = AffineExpr()
        self.equalities: list[tuple[str, AffineExpr]] = []
        self.inequalities: list[tuple[str, AffineExpr]] = []
        self.lmis: list[Lmi] = []
        self._psd_blocks: list[tuple[str, int]] = []

    def _allocate(self, name: str, kind: str, size: int, count: int) -> int:
        if any(block.name == name for block in self.variables):
            raise ConicModelError(f"variavel repetida: {name}")
        start = self.n_vars
        self.variables.append(VariableBlock(name, kind, size, start, count))
        self.n_vars += count
        return start

    def scalar(
        self,
        name: str,
        *,
        lower: float | None = None,
        upper: float | None = None,
    ) -> AffineExpr:
        idx = self._allocate(name, "scalar", 1, 1)
        var = AffineExpr({idx: 1.0})
        if lower is not None:
            self.add_ge(var, lower, tag=f"{name}>=lb")
        if upper is not None:
            self.add_le(var, upper, tag=f"{name}<=ub")
        return var

    def hermitian(self, name: str, n: int, *, psd: bool = False, real: bool = False) -> AffineMatrix:
        if n < 1:
            raise ConicModelError(f"bloco {name} com dimensao {n}")
        off = n * (n - 1) // 2
        count = n + off * (1 if real else 2)
        start = self._allocate(name, "symmetric" if real else "hermitian", n, count)
        terms: dict[int, np.ndarray] = {}
        idx = start
        for i in range(n):
            unit = np.zeros((n, n), dtype=complex)
            unit[i, i] = 1.0
            terms[idx] = unit
            idx += 1
        for i in range(n):
            for j in range(i):
                unit = np.zeros((n, n), dtype=complex)
                unit[i, j] = unit[j, i] = 1.0
                terms[idx] = unit
                idx += 1
                if not real:
                    unit = np.zeros((n, n), dtype=complex)
                    unit[i, j] = 1j
                    unit[j, i] = -1j
                    terms[idx] = unit
                    idx += 1
        matrix = AffineMatrix((n, n), terms)
        if psd:
            self._psd_blocks.append((name, n))
            self.add_lmi(matrix, tag=f"psd:{name}")
        return matrix

    def add_eq(self, lhs, rhs=0.0, *, tag: str) -> None:
        self.equalities.append((tag, AffineExpr.lift(lhs) - rhs))

    def add_le(self, lhs, rhs=0.0, *, tag: str) -> None:
        self.inequalities.append((tag, AffineExpr.lift(lhs) - rhs))

    def add_ge(self, lhs, rhs=0.0, *, tag: str) -> None:
        self.inequalities.append((tag, AffineExpr.lift(rhs) - lhs))

    def add_lmi(self, matrix, *, tag: str) -> int:
        matrix = AffineMatrix.lift(matrix)
        n, m = matrix.shape
        if n != m:
            raise ConicModelError(f"LMI {tag} nao quadrada: {matrix.shape}")
        for coef in [matrix.const, *matrix.terms.values()]:
            scale = max(1.0, float(np.max(np.abs(coef))))
            if np.max(np.abs(coef - coef.conj().T)) > 1e-9 * scale:
                raise ConicModelError(f"LMI {tag} nao hermitiana")
        self.lmis.append(Lmi(tag, matrix))
        return len(self.lmis) - 1

    def maximize(self, expr) -> None:
        self.objective = AffineExpr.lift(expr)

    @property
    def psd_blocks(self) -> list[tuple[str, int]]:
        return list(self._psd_blocks)

    @property
    def scalar_vars(self) -> list[str]:
        return [block.name for block in self.variables if block.kind == "scalar"]

    def tag_map(self) -> dict[str, list[int]]:
        mapping: dict[str, list[int]] = {}
        for idx, lmi in enumerate(self.lmis):
            mapping.setdefault(lmi.tag, []).append(idx)
        return mapping

    def lmi_sizes(self) -> list[int]:
        return [
            lmi.matrix.shape[0] * (1 if lmi.matrix.is_real() else 2) for lmi in self.lmis
        ]

    def compile(self) -> CompiledProblem:
        n = self.n_vars
        c = -self.objective.coefficients(n)
        a = np.array([expr.coefficients(n) for _, expr in self.equalities]).reshape(-1, n)
        b = np.array([-expr.const for _, expr in self.equalities])
        lp_rows = [expr.coefficients(n) for _, expr in self.inequalities]
        lp_h = [-expr.const for _, expr in self.inequalities]
        g_parts = [np.array(lp_rows).reshape(-1, n)]
        h_parts = [np.array(lp_h)]
        sizes: list[int] = []
        embedded: list[bool] = []
        for lmi in self.lmis:
            real = lmi.matrix.is_real()
            convert = (lambda m: m.real) if real else _embed
            size = lmi.matrix.shape[0] * (1 if real else 2)
            block = np.zeros((size * (size + 1) // 2, n))
            for idx, coef in lmi.matrix.terms.items():
                block[:, idx] -= svec(convert(coef))
            g_parts.append(block)
            h_parts.append(svec(convert(lmi.matrix.const)))
            sizes.append(size)
            embedded.append(not real)
        return CompiledProblem(
            c=c,
            g=np.vstack(g_parts),
            h=np.concatenate(h_parts),
            a=a,
            b=b,
            dims=ConeDims(lp=len(self.inequalities), psd=tuple(sizes)),
            objective_offset=self.objective.const,
            embedded=embedded,
        )

    def violation(self, x: np.ndarray) -> tuple[float, str]:
        """Maior violacao (absoluta) entre todas as restricoes no ponto x."""
        worst, where = 0.0, ""
        for tag, expr in self.equalities:
            value = abs(expr.value(x))
            if value > worst:
                worst, where = value, tag
        for tag, expr in self.inequalities:
            value = expr.value(x)
            if value > worst:
                worst, where = value, tag
        for lmi in self.lmis:
            matrix = lmi.matrix.value(x)
            lowest = float(np.linalg.eigvalsh(0.5 * (matrix + matrix.conj().T))[0])
            if -lowest > worst:
                worst, where = -lowest, lmi.tag
        return worst, where

    def constraint_scale(self) -> float:
        scales = [1.0]
        scales.extend(abs(expr.const) for _, expr in self.equalities)
        scales.extend(abs(expr.const) for _, expr in self.inequalities)
        scales.extend(float(np.max(np.abs(lmi.matrix.const))) for lmi in self.lmis)
        return max(scales)


@dataclass(frozen=True)
class SolverOptions:
    gap_tol: float = 1e-7
    feas_tol: float = 1e-7
    max_iter: int = 200
    step_fraction: float = 0.98

    @classmethod
    def from_algo(cls, algo) -> SolverOptions:
        return cls(gap_tol=algo.gap_tol, feas_tol=algo.feas_tol, max_iter=algo.max_solver_iter)


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    objective: float
    dual_objective: float
    gap: float
    iterations: int
    max_violation: float
    near_optimal: bool
    message: str
    solve_time_s: float
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z_lp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lmi_duals: list[np.ndarray] = field(default_factory=list)

    @property
    def usable(self) -> bool:
        return self.status == OPTIMAL or (
            self.status == NUMERICAL_FAILURE and self.near_optimal
        )

    def value(self, handle):
        if isinstance(handle, AffineExpr):
            return handle.value(self.x)
        if isinstance(handle, AffineMatrix):
            return handle.value(self.x)
        if isinstance(handle, (list, tuple)):
            return [self.value(item) for item in handle]
        raise ConicModelError(f"handle invalido: {type(handle).__name__}")


def _complex_dual(real_dual: np.ndarray) -> np.ndarray:
    """Converte o dual realificado em D hermitiana com <Z, embed(H)> = Re Tr(D H)."""
    n = real_dual.shape[0] // 2
    p, q, r = real_dual[:n, :n], real_dual[n:, :n], real_dual[n:, n:]
    return (p + r) + 1j * (q - q.T)


def solve(problem: ConicProblem, opts: SolverOptions | None = None) -> ConicSolution:
    opts = opts or SolverOptions()
    started = time.perf_counter()
    compiled = problem.compile()
    result = solve_conelp(
        compiled.c,
        compiled.g,
        compiled.h,
        compiled.a,
        compiled.b,
        compiled.dims,
        IpmOptions(
            feas_tol=opts.feas_tol,
            gap_tol=opts.gap_tol,
            max_iter=opts.max_iter,
            step_fraction=opts.step_fraction,
        ),
    )
    status = result.status
    message = result.message
    violation, where = problem.violation(result.x)
    # Reverificacao independente no modelo original.
    recheck_tol = 10.0 * opts.feas_tol * max(1.0, float(np.linalg.norm(compiled.h)))
    near = result.near_optimal
    if status == OPTIMAL and violation > recheck_tol:
        status = NUMERICAL_FAILURE
        message = f"reverificacao falhou em {where}: violacao {violation:.3g}"
        near = violation <= 100.0 * recheck_tol

    lp = compiled.dims.lp
    lmi_duals: list[np.ndarray] = []
    offset = lp
    for size, is_embedded in zip(compiled.dims.psd, compiled.embedded):
        count = size * (size + 1) // 2
        dual = smat(result.z[offset : offset + count], size)
        lmi_duals.append(_complex_dual(dual) if is_embedded else dual)
        offset += count

    sense_offset = compiled.objective_offset
    return ConicSolution(
        status=status,
        x=result.x,
        objective=-result.pcost + sense_offset if math.isfinite(result.pcost) else math.nan,
        dual_objective=-result.dcost + sense_offset if math.isfinite(result.dcost) else math.nan,
        gap=result.gap,
        iterations=result.iterations,
        max_violation=violation,
        near_optimal=near,
        message=message,
        solve_time_s=time.perf_counter() - started,
        y=result.y,
        z_lp=result.z[:lp],
        lmi_duals=lmi_duals,
    )


def _check_square(name: str, matrix: AffineMatrix, size: int | None = None) -> None:
    if matrix.shape[0] != matrix.shape[1] or (size is not None and matrix.shape[0] != size):
        raise ConicModelError(f"{name} com dimensao {matrix.shape}")


def sproc_lmi(
    problem: ConicProblem,
    a1,
    b1,
    c1,
    a2,
    b2,
    c2,
    *,
    tag: str,
) -> AffineExpr:
    """S-procedimento para a implicacao f1(x) >= 0  =>  f2(x) >= 0.

    Com f_i(x) = [x;1]^H [[A_i, b_i],[b_i^H, c_i]] [x;1] e um ponto estrito em f1,
    a implicacao vale sse existe eps >= 0
    com [[A2, b2],[b2^H, c2]] - eps*[[A1, b1],[b1^H, c1]] >= 0.
    """
    mats = [AffineMatrix.lift(m) for m in (a1, b1, c1, a2, b2, c2)]
    a1m, b1m, c1m, a2m, b2m, c2m = mats
    n = a1m.shape[0]
    _check_square("A1", a1m)
    _check_square("A2", a2m, n)
    for name, vec in (("b1", b1m), ("b2", b2m)):
        if vec.shape != (n, 1):
            raise ConicModelError(f"{name} com dimensao {vec.shape}, esperado {(n, 1)}")
    for name, scal in (("c1", c1m), ("c2", c2m)):
        if scal.shape != (1, 1):
            raise ConicModelError(f"{name} deve ser escalar")
    eps = problem.scalar(f"eps:{tag}", lower=0.0)
    outer = bmat([[a2m, b2m], [b2m.H, c2m]])
    inner = bmat([[a1m, b1m], [b1m.H, c1m]])
    # eps * inner, com inner constante ou afim mas nunca ambos afins
    if inner.terms:
        raise ConicModelError("a restricao de origem deve ser constante")
    product = AffineMatrix(
        inner.shape, {i: coef * inner.const for i, coef in eps.terms.items()}
    )
    problem.add_lmi(outer - product, tag=tag)
    return eps


def gsproc_lmi(
    problem: ConicProblem,
    d,
    b,
    e,
    *,
    radius: float,
    tag: str,
) -> AffineExpr:
    """S-procedimento generalizado para incerteza matricial em bola de Frobenius.

    Garante E + X^H B + B^H X + X^H D X >= 0 para todo ||X||_F <= radius emitindo
    [[E - eps*I, r*B^H],[r*B, r^2*D + eps*I]] >= 0, que e congruente a
    [[E, B^H],[B, D]] - eps*[[I, 0],[0, -I/r^2]] >= 0 para r > 0.
    """
    d_m, b_m, e_m = (AffineMatrix.lift(m) for m in (d, b, e))
    _check_square("D", d_m)
    _check_square("E", e_m)
    q, p = d_m.shape[0], e_m.shape[0]
    if b_m.shape != (q, p):
        raise ConicModelError(f"B com dimensao {b_m.shape}, esperado {(q, p)}")
    if radius < 0.0:
        raise ConicModelError("raio negativo")
    eps = problem.scalar(f"eps:{tag}", lower=0.0)
    top = e_m - eps.times(np.eye(p))
    bottom = d_m * (radius**2) + eps.times(np.eye(q))
    off = b_m * radius
    problem.add_lmi(bmat([[top, off.H], [off, bottom]]), tag=tag)
    return eps


def frobenius_epigraph(problem: ConicProblem, matrix: AffineMatrix, *, tag: str) -> AffineExpr:
    """Retorna t com t >= ||matrix||_F^2 (matriz hermitiana afim)."""
    parts = matrix.frobenius_parts()
    t = problem.scalar(f"t:{tag}")
    size = len(parts)
    terms: dict[int, np.ndarray] = {}
    const = np.zeros((size + 1, size + 1), dtype=complex)
    const[1:, 1:] = np.eye(size)
    for row, part in enumerate(parts, start=1):
        const[row, 0] = const[0, row] = part.const
        for idx, coef in part.terms.items():
            if idx not in terms:
                terms[idx] = np.zeros((size + 1, size + 1), dtype=complex)
            terms[idx][row, 0] += coef
            terms[idx][0, row] += coef
    for idx, coef in t.terms.items():
        terms.setdefault(idx, np.zeros((size + 1, size + 1), dtype=complex))
        terms[idx][0, 0] += coef
    problem.add_lmi(AffineMatrix((size + 1, size + 1), terms, const), tag=tag)
    return t


def dump_problem(problem: ConicProblem, path: str | Path) -> Path:
    """Grava o problema compilado em texto: cabecalho e cada bloco em linhas densas."""
    compiled = problem.compile()
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"# problema {problem.name}",
        f"variaveis {problem.n_vars}",
        f"igualdades {compiled.a.shape[0]}",
        f"desigualdades {compiled.dims.lp}",
        f"lmis {len(compiled.dims.psd)}",
        "objetivo_min " + " ".join(f"{v:.17g}" for v in compiled.c),
    ]
    for row, rhs in zip(compiled.a, compiled.b):
        lines.append("eq " + " ".join(f"{v:.17g}" for v in row) + f" = {rhs:.17g}")
    for row, rhs in zip(compiled.g[: compiled.dims.lp], compiled.h[: compiled.dims.lp]):
        lines.append("le " + " ".join(f"{v:.17g}" for v in row) + f" <= {rhs:.17g}")
    offset = compiled.dims.lp
    for lmi, size in zip(problem.lmis, compiled.dims.psd):
        count = size * (size + 1) // 2
        lines.append(f"lmi {lmi.tag} {size}")
        f0 = smat(compiled.h[offset : offset + count], size)
        lines.extend("  F0 " + " ".join(f"{v:.17g}" for v in row) for row in f0)
        block = compiled.g[offset : offset + count]
        for idx in np.flatnonzero(np.any(block != 0.0, axis=0)):
            fi = -smat(block[:, idx], size)
            lines.extend(f"  F{idx + 1} " + " ".join(f"{v:.17g}" for v in row) for row in fi)
        offset += count
    target.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return target


def tag_map_lines(problem: ConicProblem) -> list[str]:
    return [f"{tag} -> {','.join(str(i) for i in idx)}" for tag, idx in problem.tag_map().items()]

