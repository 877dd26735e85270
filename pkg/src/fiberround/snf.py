"""Smith normal form over the integers, with unimodular transforms.

Matrices are numpy object arrays of Python ints, so there is no overflow and
zero-sized shapes (maps into or out of the trivial group) behave.  The
decomposition satisfies ``U @ A @ V == D`` with ``U``, ``V`` unimodular and
``D`` diagonal with ``d_1 | d_2 | ... | d_r``, all positive.
"""

from __future__ import annotations

import dataclasses

import numpy as np


def int_matrix(A, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Copy ``A`` into a 2-D object array of Python ints."""
    arr = np.array(A, dtype=object)
    if shape is not None:
        arr = arr.reshape(shape)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D integer matrix, got shape {arr.shape}")
    out = np.empty(arr.shape, dtype=object)
    for idx, x in np.ndenumerate(arr):
        if isinstance(x, (float, np.floating)) and not float(x).is_integer():
            raise ValueError(f"non-integer entry {x!r}")
        out[idx] = int(x)
    return out


def identity(n: int) -> np.ndarray:
    return int_matrix(np.eye(n, dtype=int), (n, n))


@dataclasses.dataclass(frozen=True, eq=False)
class SmithForm:
    diagonal: tuple[int, ...]  # nonzero invariant factors, d_1 | d_2 | ...
    U: np.ndarray  # m x m, unimodular
    V: np.ndarray  # n x n, unimodular
    U_inv: np.ndarray
    shape: tuple[int, int]

    @property
    def rank(self) -> int:
        return len(self.diagonal)

    @property
    def D(self) -> np.ndarray:
        D = int_matrix(np.zeros(self.shape, dtype=int), self.shape)
        for i, d in enumerate(self.diagonal):
            D[i, i] = d
        return D


def smith_normal_form(A) -> SmithForm:
    D = int_matrix(A)
    m, n = D.shape
    U, U_inv, V = identity(m), identity(m), identity(n)

    def swap_rows(i, j):
        if i != j:
            D[[i, j]] = D[[j, i]]
            U[[i, j]] = U[[j, i]]
            U_inv[:, [i, j]] = U_inv[:, [j, i]]

    def swap_cols(i, j):
        if i != j:
            D[:, [i, j]] = D[:, [j, i]]
            V[:, [i, j]] = V[:, [j, i]]

    def add_row(dst, src, q):  # row_dst += q * row_src
        D[dst] = D[dst] + q * D[src]
        U[dst] = U[dst] + q * U[src]
        U_inv[:, src] = U_inv[:, src] - q * U_inv[:, dst]

    def add_col(dst, src, q):  # col_dst += q * col_src
        D[:, dst] = D[:, dst] + q * D[:, src]
        V[:, dst] = V[:, dst] + q * V[:, src]

    diagonal = []
    for t in range(min(m, n)):
        block = D[t:, t:]
        nz = [(abs(x), i, j) for (i, j), x in np.ndenumerate(block) if x != 0]
        if not nz:
            break
        _, i, j = min(nz)
        swap_rows(t, t + i)
        swap_cols(t, t + j)
        while True:
            p = D[t, t]
            # reduce the pivot column and row by Euclidean division
            for i in range(t + 1, m):
                if D[i, t] != 0:
                    add_row(i, t, -(D[i, t] // p))
            for j in range(t + 1, n):
                if D[t, j] != 0:
                    add_col(j, t, -(D[t, j] // p))
            rest = [(abs(D[i, t]), i, None) for i in range(t + 1, m) if D[i, t] != 0]
            rest += [(abs(D[t, j]), None, j) for j in range(t + 1, n) if D[t, j] != 0]
            if rest:
                _, i, j = min(rest, key=lambda r: r[0])
                if i is not None:
                    swap_rows(t, i)
                else:
                    swap_cols(t, j)
                continue
            bad = next(((i, j) for i in range(t + 1, m) for j in range(t + 1, n) if D[i, j] % p != 0), None)
            if bad is None:
                break
            add_row(t, bad[0], 1)
        if D[t, t] < 0:
            D[t] = -D[t]
            U[t] = -U[t]
            U_inv[:, t] = -U_inv[:, t]
        diagonal.append(int(D[t, t]))
    return SmithForm(tuple(diagonal), U, V, U_inv, (m, n))


def kernel_basis(A) -> np.ndarray:
    """Columns form a basis of the integer kernel ``{x in Z^n : A x = 0}``."""
    A = int_matrix(A)
    snf = smith_normal_form(A)
    return snf.V[:, snf.rank:]


def image_basis(A) -> np.ndarray:
    """Columns form a basis of the lattice spanned by the columns of ``A``."""
    A = int_matrix(A)
    snf = smith_normal_form(A)
    cols = [snf.U_inv[:, i] * d for i, d in enumerate(snf.diagonal)]
    if not cols:
        return int_matrix(np.zeros((A.shape[0], 0), dtype=int), (A.shape[0], 0))
    return np.stack(cols, axis=1)


def solve(A, b) -> np.ndarray | None:
    """An integer solution of ``A x = b``, or ``None`` when there is none."""
    A = int_matrix(A)
    m, n = A.shape
    b = int_matrix(np.reshape(np.array(b, dtype=object), (m, 1)), (m, 1))[:, 0]
    snf = smith_normal_form(A)
    c = snf.U.dot(b) if m else np.zeros(0, dtype=object)
    y = np.zeros(n, dtype=object)
    y[:] = 0
    for i in range(m):
        if i < snf.rank:
            q, r = divmod(c[i], snf.diagonal[i])
            if r != 0:
                return None
            y[i] = q
        elif c[i] != 0:
            return None
    return snf.V.dot(y) if n else y


def in_lattice(B, v) -> bool:
    """Whether ``v`` lies in the lattice spanned by the columns of ``B``."""
    return solve(B, v) is not None


def hstack(*mats, rows: int) -> np.ndarray:
    """Concatenate 2-D integer matrices that all have ``rows`` rows."""
    parts = [int_matrix(M) for M in mats]
    if any(P.shape[0] != rows for P in parts):
        raise ValueError(f"expected {rows} rows, got {[P.shape for P in parts]}")
    return np.concatenate(parts, axis=1) if parts else int_matrix(np.zeros((rows, 0), dtype=int))
