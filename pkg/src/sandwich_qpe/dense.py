"""Brute-force few-qubit backend: explicit state vectors and matrices.

This module exists purely as an oracle.  It evaluates the same overlaps as
:mod:`sandwich_qpe.spectral` by direct matrix-vector products, which lets the
test suite cross-check the rank-one-update algebra on explicit unitaries.
Qubit counts are capped at 12 so a full matrix never exceeds 4096 x 4096.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import schur

from .spectral import SpectralModel, phase_factor, wrap_angle

MAX_QUBITS = 12

# Tolerances for construction-time sanity checks.
NORM_TOL = 1e-10
UNITARY_TOL = 1e-8

# Eigenphases closer than this are merged when spectralizing; weight addition
# preserves every amplitude exactly for true degeneracies.
PHASE_MERGE_TOL = 1e-9


class DenseState:
    """Normalized complex state vector on n qubits."""

    __slots__ = ("amplitudes", "n")

    def __init__(self, amplitudes):
        vec = np.array(np.asarray(amplitudes, dtype=complex).ravel(), dtype=complex)
        n = int(round(math.log2(vec.size))) if vec.size else 0
        if vec.size == 0 or 2**n != vec.size:
            raise ValueError("state length must be a power of two")
        if n > MAX_QUBITS:
            raise ValueError(f"at most {MAX_QUBITS} qubits supported")
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state norm {norm} deviates from 1 beyond {NORM_TOL}")
        vec.flags.writeable = False
        self.amplitudes = vec
        self.n = n


class DenseUnitary:
    """Explicit 2^n x 2^n unitary, spot-checked on random vectors."""

    __slots__ = ("entries", "n")

    def __init__(self, entries):
        mat = np.array(np.asarray(entries, dtype=complex), dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("unitary must be a square matrix")
        dim = mat.shape[0]
        n = int(round(math.log2(dim)))
        if 2**n != dim:
            raise ValueError("matrix dimension must be a power of two")
        if n > MAX_QUBITS:
            raise ValueError(f"at most {MAX_QUBITS} qubits supported")
        check_rng = np.random.default_rng(0x5EED)
        for _ in range(2):
            v = check_rng.standard_normal(dim) + 1j * check_rng.standard_normal(dim)
            v /= np.linalg.norm(v)
            if np.linalg.norm(mat.conj().T @ (mat @ v) - v) > UNITARY_TOL:
                raise ValueError("matrix fails the unitarity spot check")
        mat.flags.writeable = False
        self.entries = mat
        self.n = n


def sprotis(psi: DenseState, phi: float) -> DenseUnitary:
    """Selective phase rotation of psi: 1 + (exp(2 i phi) - 1) |psi><psi|.

    Acts as exp(2 i phi) on psi and as the identity on its orthogonal
    complement, so the result is unitary by construction.
    """
    mat = np.eye(psi.amplitudes.size, dtype=complex) + phase_factor(phi) * np.outer(
        psi.amplitudes, psi.amplitudes.conj()
    )
    return DenseUnitary(mat)


def _apply_power(U: DenseUnitary, vec: np.ndarray, k: int) -> np.ndarray:
    for _ in range(k):
        vec = U.entries @ vec
    return vec


def _apply_sprotis(psi: np.ndarray, vec: np.ndarray, phi: float) -> np.ndarray:
    return vec + phase_factor(phi) * psi * np.vdot(psi, vec)


def dense_amplitude(U: DenseUnitary, psi: DenseState, k: int) -> complex:
    """<psi|U^k|psi> by repeated matrix-vector products."""
    if k < 0:
        raise ValueError("power k must be nonnegative")
    return complex(np.vdot(psi.amplitudes, _apply_power(U, psi.amplitudes, k)))


def sandwich_matrix(
    U: DenseUnitary, psi: DenseState, a: int, b: int, phi: float
) -> complex:
    """<psi|U^a R_psi^phi U^b|psi> evaluated on explicit vectors."""
    if a < 0 or b < 0:
        raise ValueError("powers a, b must be nonnegative")
    if U.n != psi.n:
        raise ValueError("unitary and state dimensions disagree")
    vec = _apply_power(U, psi.amplitudes, b)
    vec = _apply_sprotis(psi.amplitudes, vec, phi)
    vec = _apply_power(U, vec, a)
    return complex(np.vdot(psi.amplitudes, vec))


def two_layer_matrix(
    U: DenseUnitary,
    psi: DenseState,
    a: int,
    b: int,
    c: int,
    phi1: float,
    phi2: float,
) -> complex:
    """<psi|U^a R^{phi1} U^b R^{phi2} U^c|psi> on explicit vectors."""
    if min(a, b, c) < 0:
        raise ValueError("powers a, b, c must be nonnegative")
    if U.n != psi.n:
        raise ValueError("unitary and state dimensions disagree")
    vec = _apply_power(U, psi.amplitudes, c)
    vec = _apply_sprotis(psi.amplitudes, vec, phi2)
    vec = _apply_power(U, vec, b)
    vec = _apply_sprotis(psi.amplitudes, vec, phi1)
    vec = _apply_power(U, vec, a)
    return complex(np.vdot(psi.amplitudes, vec))


def spectralize(U: DenseUnitary, psi: DenseState) -> SpectralModel:
    """Eigendecompose (U, psi) into a spectral model.

    Uses a complex Schur decomposition, which for a unitary (hence normal)
    matrix yields an orthonormal eigenbasis; plain eig can return skewed
    vectors inside degenerate subspaces, corrupting the weights.
    """
    if U.n != psi.n:
        raise ValueError("unitary and state dimensions disagree")
    T, Z = schur(np.asarray(U.entries), output="complex")
    phases = np.array([wrap_angle(float(v)) for v in np.angle(np.diag(T))])
    weights = np.abs(Z.conj().T @ psi.amplitudes) ** 2
    merged_phases, merged_weights = _merge_degenerate(phases, weights)
    total = merged_weights.sum()
    return SpectralModel(
        merged_phases, merged_weights / total, label=f"spectralized(n={U.n})"
    )


def _merge_degenerate(phases: np.ndarray, weights: np.ndarray):
    order = np.argsort(phases)
    phases = phases[order]
    weights = weights[order]
    groups = [[0]]
    for i in range(1, phases.size):
        if phases[i] - phases[groups[-1][-1]] <= PHASE_MERGE_TOL:
            groups[-1].append(i)
        else:
            groups.append([i])
    # The canonical interval wraps: a cluster may straddle -pi / pi.
    if len(groups) > 1 and (phases[groups[0][0]] + 2 * math.pi) - phases[
        groups[-1][-1]
    ] <= PHASE_MERGE_TOL:
        groups[-1].extend(groups.pop(0))
    out_phases = []
    out_weights = []
    for idx in groups:
        w = weights[idx]
        ph = phases[idx]
        if len(idx) > 1:
            # Weighted circular mean, safe because the cluster spans <= tol.
            ref = ph[0]
            ph = ref + np.array([wrap_angle(v - ref) for v in ph])
        wsum = float(w.sum())
        mean = float(np.average(ph, weights=w)) if wsum > 0 else float(ph[0])
        out_phases.append(wrap_angle(mean))
        out_weights.append(wsum)
    return np.array(out_phases), np.array(out_weights)


def random_dense_instance(n: int, seed: int) -> tuple[DenseUnitary, DenseState]:
    """Haar-like random unitary (QR of a Gaussian) and random state.

    Deterministic per seed; 1 <= n <= 12.
    """
    if not 1 <= n <= MAX_QUBITS:
        raise ValueError(f"n must lie in [1, {MAX_QUBITS}]")
    rng = np.random.default_rng(seed)
    dim = 2**n
    A = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    Q, R = np.linalg.qr(A)
    d = np.diag(R)
    Q = Q * (d / np.abs(d))
    vec = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    vec /= np.linalg.norm(vec)
    return DenseUnitary(Q), DenseState(vec)
