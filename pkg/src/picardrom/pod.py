"""Snapshot management and the projection-based reduced-order model.

A FIFO window of recent full-order solutions feeds a centered SVD (or
Gram-Schmidt) basis with energy truncation. The reduced solve projects the
full linear system onto that basis and reports the full-space residual, from
which the standard inverse-norm error bound follows.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import (
    ConvergenceFailure,
    DimensionMismatch,
    SingularMatrix,
    SingularReducedSystem,
    SvdFailure,
    TooFewSnapshots,
)

GS_DROP_RTOL = 1e-12  # post-orthogonalization norm below this (relative) drops a column


class SnapshotWindow:
    """Bounded FIFO store of equal-length snapshot vectors."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._columns: deque[np.ndarray] = deque(maxlen=capacity)
        self.insertion_count = 0

    def __len__(self) -> int:
        return len(self._columns)

    @property
    def columns(self) -> list[np.ndarray]:
        return list(self._columns)

    @property
    def dim(self) -> int | None:
        return self._columns[0].size if self._columns else None

    def push(self, u) -> "SnapshotWindow":
        u = numerics.as_vector(u)
        if self._columns and u.size != self.dim:
            raise DimensionMismatch(
                f"snapshot length {u.size} != window dimension {self.dim}"
            )
        self._columns.append(u.copy())
        self.insertion_count += 1
        return self

    def matrix(self) -> np.ndarray:
        return np.column_stack(self._columns)


def push_snapshot(window: SnapshotWindow, u) -> SnapshotWindow:
    """Append a snapshot, evicting the oldest when the window is full."""
    return window.push(u)


@dataclass(frozen=True)
class ReducedBasis:
    """Orthonormal basis of the centered snapshot space plus the mean field."""

    basis: np.ndarray            # (N, M), orthonormal columns
    mean: np.ndarray             # (N,)
    singular_values: np.ndarray  # centered singular values (empty for GS)
    source_size: int             # snapshots used to build the basis

    @property
    def size(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class RomSolution:
    reduced_coords: np.ndarray  # (M,)
    full_field: np.ndarray      # basis @ reduced_coords + mean
    residual_norm: float


def _centered(window: SnapshotWindow) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if len(window) < 2:
        raise TooFewSnapshots("basis construction needs at least 2 snapshots")
    phi = window.matrix()
    mean = phi.mean(axis=1)
    return phi, mean, phi - mean[:, None]


def build_basis_svd(window: SnapshotWindow, eps_rb: float) -> ReducedBasis:
    """POD basis: centered SVD truncated by the energy criterion.

    The basis size M is the smallest count whose captured energy fraction
    reaches ``1 - eps_rb**2``, capped at the numerical rank. A window of
    identical snapshots degenerates to M = 0 (mean field only).
    """
    if not 0.0 < eps_rb < 1.0:
        raise ValueError("eps_rb must lie in (0, 1)")
    phi, mean, centered = _centered(window)
    try:
        dec = numerics.svd(centered)
    except ConvergenceFailure as exc:
        raise SvdFailure(str(exc)) from exc
    s = dec.singular_values
    scale = max(1.0, numerics.frobenius(phi))
    if s.size == 0 or s[0] <= numerics.RANK_RTOL * scale:
        m = 0
    else:
        rank = int(np.count_nonzero(s > numerics.RANK_RTOL * s[0]))
        energy = np.cumsum(s**2) / np.sum(s**2)
        m = int(np.searchsorted(energy, 1.0 - eps_rb**2) + 1)
        m = min(m, rank)
    return ReducedBasis(
        basis=dec.left[:, :m].copy(),
        mean=mean,
        singular_values=s.copy(),
        source_size=len(window),
    )


def build_basis_gs(window: SnapshotWindow) -> ReducedBasis:
    """Modified Gram-Schmidt basis of the centered snapshots (no truncation)."""
    _, mean, centered = _centered(window)
    kept: list[np.ndarray] = []
    for col in centered.T:
        w = col.copy()
        original = numerics.norm2(w)
        for q in kept:
            w -= (q @ w) * q
        # second pass for numerical orthogonality
        for q in kept:
            w -= (q @ w) * q
        nrm = numerics.norm2(w)
        if original > 0.0 and nrm > GS_DROP_RTOL * original:
            kept.append(w / nrm)
    n = centered.shape[0]
    basis = np.column_stack(kept) if kept else np.zeros((n, 0))
    return ReducedBasis(
        basis=basis,
        mean=mean,
        singular_values=np.zeros(0),
        source_size=len(window),
    )


def rom_solve(basis: ReducedBasis, a, f) -> RomSolution:
    """Solve the projected system and report the full-space residual.

    With V the basis and u_mean the mean snapshot, solves
    ``(V^T A V) v = V^T f - V^T A u_mean`` and returns
    ``V v + u_mean`` together with ``||A (V v + u_mean) - f||``.
    """
    a = numerics.as_matrix(a)
    f = numerics.as_vector(f)
    n = basis.mean.size
    if a.shape != (n, n) or f.size != n:
        raise DimensionMismatch("system dimensions do not match the basis")
    v_mat = basis.basis
    if basis.size == 0:
        full = basis.mean.copy()
        coords = np.zeros(0)
    else:
        a_v = a @ v_mat
        reduced_a = v_mat.T @ a_v
        reduced_rhs = v_mat.T @ f - v_mat.T @ (a @ basis.mean)
        try:
            coords = numerics.solve_dense(reduced_a, reduced_rhs)
        except SingularMatrix as exc:
            raise SingularReducedSystem(str(exc)) from exc
        full = v_mat @ coords + basis.mean
    residual = numerics.norm2(a @ full - f)
    return RomSolution(reduced_coords=coords, full_field=full, residual_norm=residual)


def rom_error_bound(inv_norm_estimate: float, residual_norm: float) -> float:
    """Residual-based error bound ``||A^{-1}|| * ||r||``."""
    if inv_norm_estimate < 0.0 or residual_norm < 0.0:
        raise ValueError("bound factors must be nonnegative")
    return inv_norm_estimate * residual_norm
