"""Oracle equivalence suites run by the `verify` CLI command.

Each check compares the closed-form spectral algebra against brute-force
matrix evaluation on random dense instances and reports its worst error.
The fault flag flips one sign inside the closed form under test; a healthy
harness must then fail, which guards against vacuous checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dense
from .spectral import (
    Amplitude,
    exact_amplitude,
    exact_sandwich_magnitude,
    sandwich_magnitude_from_polar,
    two_layer_expansion,
    wrap_angle,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    worst_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst_error <= self.tolerance


def _polar_sandwich(amp_a, amp_b, amp_ab, phi, fault=False):
    if not fault:
        return sandwich_magnitude_from_polar(amp_a, amp_b, amp_ab, phi)
    # Fault hook: sign of the sin(omega) cross term flipped.
    ra, rb, rab = amp_a.modulus, amp_b.modulus, amp_ab.modulus
    omega = amp_a.argument + amp_b.argument - amp_ab.argument + phi
    sphi = math.sin(phi)
    s2 = (
        rab * rab
        + 4.0 * (ra * rb * sphi) ** 2
        + 4.0 * rab * ra * rb * sphi * math.sin(omega)
    )
    return math.sqrt(max(s2, 0.0))


def check_sandwich_identity(n: int, seeds, fault: bool = False) -> CheckResult:
    """Dense |<psi|U^a R U^b|psi>| against the closed form, from dense amplitudes."""
    worst = 0.0
    for seed in seeds:
        U, psi = dense.random_dense_instance(n, seed)
        rng = np.random.default_rng(seed + 1)
        for _ in range(5):
            a = int(rng.integers(0, 9))
            b = int(rng.integers(0, 9))
            phi = float(rng.uniform(-math.pi, math.pi))
            reference = abs(dense.sandwich_matrix(U, psi, a, b, phi))
            amps = [
                Amplitude.from_complex(dense.dense_amplitude(U, psi, p))
                for p in (a, b, a + b)
            ]
            closed = _polar_sandwich(*amps, phi, fault=fault)
            worst = max(worst, abs(reference - closed))
    return CheckResult("sandwich_identity", worst, 1e-10)


def check_sprotis(n: int, seeds) -> CheckResult:
    """Unitarity and eigenaction of the selective phase rotation."""
    worst = 0.0
    for seed in seeds:
        _, psi = dense.random_dense_instance(n, seed)
        rng = np.random.default_rng(seed + 2)
        phi = float(rng.uniform(-math.pi, math.pi))
        R = dense.sprotis(psi, phi)
        mat = R.entries
        v = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
        v /= np.linalg.norm(v)
        worst = max(worst, float(np.linalg.norm(mat.conj().T @ (mat @ v) - v)))
        # R acts as exp(2 i phi) on psi and identity on the complement.
        expected = np.exp(2j * phi) * psi.amplitudes
        worst = max(worst, float(np.linalg.norm(mat @ psi.amplitudes - expected)))
        perp = v - psi.amplitudes * np.vdot(psi.amplitudes, v)
        perp /= np.linalg.norm(perp)
        worst = max(worst, float(np.linalg.norm(mat @ perp - perp)))
    return CheckResult("sprotis_action", worst, 1e-8)


def check_spectralize(n: int, seeds, k_max: int = 64) -> CheckResult:
    """Spectral amplitudes versus dense power iteration, all k <= k_max."""
    worst = 0.0
    for seed in seeds:
        U, psi = dense.random_dense_instance(n, seed)
        model = dense.spectralize(U, psi)
        vec = psi.amplitudes
        for k in range(k_max + 1):
            z_dense = complex(np.vdot(psi.amplitudes, vec))
            z_model = exact_amplitude(model, k)
            worst = max(worst, abs(z_dense - z_model.complex))
            vec = U.entries @ vec
    return CheckResult("spectralize_amplitudes", worst, 1e-10)


def check_spectral_sandwich(n: int, seeds) -> CheckResult:
    """exact_sandwich_magnitude on the spectralized model versus dense."""
    worst = 0.0
    for seed in seeds:
        U, psi = dense.random_dense_instance(n, seed)
        model = dense.spectralize(U, psi)
        rng = np.random.default_rng(seed + 3)
        for _ in range(4):
            a = int(rng.integers(0, 7))
            b = int(rng.integers(0, 7))
            phi = float(rng.uniform(-math.pi, math.pi))
            worst = max(
                worst,
                abs(
                    abs(dense.sandwich_matrix(U, psi, a, b, phi))
                    - exact_sandwich_magnitude(model, a, b, phi)
                ),
            )
    return CheckResult("spectral_sandwich", worst, 1e-10)


def check_two_layer(n: int, seeds, fault: bool = False) -> CheckResult:
    """Dense two-layer magnitude against the four-term expansion."""
    worst = 0.0
    for seed in seeds:
        U, psi = dense.random_dense_instance(n, seed)
        rng = np.random.default_rng(seed + 4)
        for _ in range(4):
            a, b, c = (int(v) for v in rng.integers(1, 7, 3))
            phi1 = float(rng.uniform(-math.pi, math.pi))
            phi2 = float(rng.uniform(-math.pi, math.pi))
            reference = abs(dense.two_layer_matrix(U, psi, a, b, c, phi1, phi2))
            amps = {
                p: Amplitude.from_complex(dense.dense_amplitude(U, psi, p))
                for p in {a, b, c, a + b, b + c, a + b + c}
            }
            expansion = abs(
                two_layer_expansion(
                    amps[a], amps[b], amps[c], amps[a + b], amps[b + c],
                    amps[a + b + c],
                    phi1 if not fault else -phi1,
                    phi2,
                )
            )
            worst = max(worst, abs(reference - expansion))
    return CheckResult("two_layer_expansion", worst, 1e-10)


def run_verification(n: int, n_seeds: int, fault: bool = False) -> list[CheckResult]:
    """Full oracle suite on `n_seeds` random instances of n qubits."""
    if not 1 <= n <= dense.MAX_QUBITS:
        raise ValueError(f"n must lie in [1, {dense.MAX_QUBITS}]")
    if n_seeds < 1:
        raise ValueError("need at least one seed")
    seeds = range(1, n_seeds + 1)
    return [
        check_sandwich_identity(n, seeds, fault=fault),
        check_sprotis(n, seeds),
        check_spectralize(n, seeds),
        check_spectral_sandwich(n, seeds),
        check_two_layer(n, seeds, fault=fault),
    ]
