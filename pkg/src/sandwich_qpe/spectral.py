"""Closed-form spectral representation of a (U, |psi>) pair.

Every estimator in this package consumes the pair (U, |psi>) only through
overlaps of the form <psi|U^k|psi>.  Expanding |psi> in the eigenbasis of U
reduces those overlaps to

    <psi|U^k|psi> = sum_j p_j exp(i k lambda_j),

with lambda_j the eigenphases of U and p_j = |<E_j|psi>|^2 the spectral
weights of the initial state.  A :class:`SpectralModel` stores exactly that
data, so amplitudes and sandwich magnitudes cost O(levels) per evaluation
instead of O(2^n).  The dense matrix backend in :mod:`sandwich_qpe.dense`
exists only to validate this algebra.

Angles are plain floats in radians.  The canonical range is [-pi, pi);
comparisons go through :func:`angular_distance`, never raw subtraction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# Moduli below this are treated as zero: the argument of the amplitude is
# undefined, so it is reported as 0.0 with phase_defined=False.
DEGENERATE_MODULUS = 1e-14

# Slack on the modulus <= 1 invariant (accumulated float error).
MODULUS_SLACK = 1e-12


class ModelParameterError(ValueError):
    """Invalid arguments to a model generator."""


class ModelFormatError(ValueError):
    """Malformed or invariant-violating model file."""


def wrap_angle(x: float) -> float:
    """Map an angle to the canonical range [-pi, pi).

    Exact for inputs already in range (IEEE remainder is exact), so
    canonicalization is idempotent at the bit level.
    """
    y = math.remainder(x, TWO_PI)
    return -math.pi if y == math.pi else y


def add_angles(a: float, b: float) -> float:
    """Modular sum of two angles, canonicalized."""
    return wrap_angle(a + b)


def angular_distance(a: float, b: float) -> float:
    """Distance on the circle; symmetric, zero iff a == b mod 2pi, <= pi."""
    return abs(wrap_angle(a - b))


@dataclass(frozen=True)
class Amplitude:
    """Polar form of an overlap r * exp(i * theta).

    ``phase_defined`` is False when the modulus is numerically zero; the
    argument is then reported as 0.0 and callers must branch on the flag
    before using it.
    """

    modulus: float
    argument: float
    phase_defined: bool = True

    def __post_init__(self):
        if self.modulus < 0.0 or self.modulus > 1.0 + MODULUS_SLACK:
            raise ValueError(f"modulus {self.modulus} outside [0, 1]")

    @classmethod
    def from_complex(cls, z: complex) -> "Amplitude":
        r = abs(z)
        if r > 1.0 + MODULUS_SLACK:
            raise ValueError(f"overlap magnitude {r} exceeds 1")
        if r < DEGENERATE_MODULUS:
            return cls(r, 0.0, phase_defined=False)
        return cls(min(r, 1.0), wrap_angle(math.atan2(z.imag, z.real)))

    @property
    def complex(self) -> complex:
        return self.modulus * complex(math.cos(self.argument), math.sin(self.argument))


class SpectralModel:
    """Eigenphase/weight representation of a (U, |psi>) pair.

    Invariants enforced at construction: equal nonzero lengths, weights all
    nonnegative and summing to 1 within 1e-12, eigenphases canonicalized to
    [-pi, pi).  Instances are immutable (arrays are frozen), so concurrent
    reads are safe.
    """

    __slots__ = ("eigenphases", "weights", "label")

    def __init__(self, eigenphases, weights, label: str = ""):
        phases = np.asarray(
            [wrap_angle(float(v)) for v in np.asarray(eigenphases, dtype=float).ravel()],
            dtype=float,
        )
        w = np.array(np.asarray(weights, dtype=float).ravel(), dtype=float)
        if phases.size == 0 or phases.size != w.size:
            raise ValueError(
                f"eigenphases ({phases.size}) and weights ({w.size}) must have "
                "equal nonzero length"
            )
        if np.any(w < 0.0):
            raise ValueError("weights must be nonnegative")
        total = float(np.sum(w))
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {total}, expected 1 within 1e-12")
        phases.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "eigenphases", phases)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "label", str(label))

    def __setattr__(self, name, value):
        raise AttributeError("SpectralModel is immutable")

    def __len__(self) -> int:
        return self.eigenphases.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpectralModel):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.eigenphases, other.eigenphases)
            and np.array_equal(self.weights, other.weights)
        )

    def __repr__(self) -> str:
        return f"SpectralModel(levels={len(self)}, label={self.label!r})"


def exact_amplitude(model: SpectralModel, k: int) -> Amplitude:
    """Exact overlap <psi|U^k|psi> in polar form.

    k = 0 is the identity acting on a normalized state, hence exactly (1, 0)
    regardless of float error in the stored weights.
    """
    k = int(k)
    if k < 0:
        raise ValueError("power k must be nonnegative")
    if k == 0:
        return Amplitude(1.0, 0.0)
    z = complex(np.sum(model.weights * np.exp(1j * k * model.eigenphases)))
    return Amplitude.from_complex(z)


def amplitude_series(model: SpectralModel, ks) -> np.ndarray:
    """Complex overlaps <psi|U^k|psi> for an array of powers, chunked."""
    ks = np.asarray(ks, dtype=np.int64).ravel()
    out = np.empty(ks.size, dtype=complex)
    chunk = max(1, 2_000_000 // max(1, len(model)))
    for lo in range(0, ks.size, chunk):
        sel = ks[lo : lo + chunk]
        out[lo : lo + chunk] = np.exp(
            1j * sel[:, None] * model.eigenphases[None, :]
        ) @ model.weights
    out[ks == 0] = 1.0
    return out


def amplitude_moduli(model: SpectralModel, k_max: int) -> np.ndarray:
    """Array of r_k for k = 0..k_max inclusive."""
    return np.abs(amplitude_series(model, np.arange(k_max + 1, dtype=np.int64)))


def exhaustive_rmin(model: SpectralModel, k_max: int) -> tuple[float, int]:
    """Minimum of r_k' over all 1 <= k' <= k_max, with the argmin power."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    moduli = amplitude_moduli(model, k_max)[1:]
    idx = int(np.argmin(moduli))
    return float(moduli[idx]), idx + 1


def phase_factor(phi: float) -> complex:
    """The rank-one update coefficient exp(2 i phi) - 1."""
    return complex(math.cos(2.0 * phi) - 1.0, math.sin(2.0 * phi))


def sandwich_expansion(
    amp_a: Amplitude, amp_b: Amplitude, amp_ab: Amplitude, phi: float
) -> complex:
    """<psi|U^a R U^b|psi> expanded over amplitudes: A_{a+b} + Phi A_a A_b."""
    return amp_ab.complex + phase_factor(phi) * amp_a.complex * amp_b.complex


def sandwich_magnitude_from_polar(
    amp_a: Amplitude, amp_b: Amplitude, amp_ab: Amplitude, phi: float
) -> float:
    """Closed-form sandwich magnitude from polar amplitudes.

    s^2 = r_{a+b}^2 + 4 r_a^2 r_b^2 sin^2(phi)
          - 4 r_{a+b} r_a r_b sin(phi) sin(omega),
    omega = theta_a + theta_b - theta_{a+b} + phi.

    Degenerate arguments are harmless: every term containing an undefined
    phase is multiplied by the corresponding zero modulus.
    """
    ra, rb, rab = amp_a.modulus, amp_b.modulus, amp_ab.modulus
    omega = amp_a.argument + amp_b.argument - amp_ab.argument + phi
    sphi = math.sin(phi)
    s2 = (
        rab * rab
        + 4.0 * (ra * rb * sphi) ** 2
        - 4.0 * rab * ra * rb * sphi * math.sin(omega)
    )
    return math.sqrt(max(s2, 0.0))


def exact_sandwich_magnitude(model: SpectralModel, a: int, b: int, phi: float) -> float:
    """Exact |<psi|U^a R_psi^phi U^b|psi>| from the spectral model."""
    if a < 0 or b < 0:
        raise ValueError("powers a, b must be nonnegative")
    return sandwich_magnitude_from_polar(
        exact_amplitude(model, a),
        exact_amplitude(model, b),
        exact_amplitude(model, a + b),
        phi,
    )


def two_layer_expansion(
    amp_a: Amplitude,
    amp_b: Amplitude,
    amp_c: Amplitude,
    amp_ab: Amplitude,
    amp_bc: Amplitude,
    amp_abc: Amplitude,
    phi1: float,
    phi2: float,
) -> complex:
    """Four-term expansion of <psi|U^a R^{phi1} U^b R^{phi2} U^c|psi>."""
    p1 = phase_factor(phi1)
    p2 = phase_factor(phi2)
    return (
        amp_abc.complex
        + p1 * amp_a.complex * amp_bc.complex
        + p2 * amp_ab.complex * amp_c.complex
        + p1 * p2 * amp_a.complex * amp_b.complex * amp_c.complex
    )


def exact_two_layer_magnitude(
    model: SpectralModel, a: int, b: int, c: int, phi1: float, phi2: float
) -> float:
    """Exact two-layer sandwich magnitude from the spectral model."""
    if min(a, b, c) < 0:
        raise ValueError("powers a, b, c must be nonnegative")
    return abs(
        two_layer_expansion(
            exact_amplitude(model, a),
            exact_amplitude(model, b),
            exact_amplitude(model, c),
            exact_amplitude(model, a + b),
            exact_amplitude(model, b + c),
            exact_amplitude(model, a + b + c),
            phi1,
            phi2,
        )
    )


MODEL_KINDS = ("two_level", "clustered", "uniform_random", "ground_dominated")


def generate_model(kind: str, size: int, seed: int, **params) -> SpectralModel:
    """Deterministic test-instance factory.

    Kinds:
      two_level(gap)                  two levels at 0 and gap, weight 1/2 each
      clustered(clusters, width)      phases in tight clusters, random weights
      uniform_random()                uniform phases, Dirichlet weights
      ground_dominated(eta)           weight eta on level 0, rest spread over
                                      the remaining levels

    Identical (kind, size, seed, params) return identical models.
    """
    size = int(size)
    if size < 1:
        raise ModelParameterError("size must be >= 1")
    if seed < 0:
        raise ModelParameterError("seed must be a nonnegative integer")
    rng = np.random.default_rng(seed)

    if kind == "two_level":
        gap = params.pop("gap", math.pi)
        _reject_extra(kind, params)
        if size != 2:
            raise ModelParameterError("two_level models have exactly 2 levels")
        phases = [0.0, float(gap)]
        weights = [0.5, 0.5]
        label = f"two_level(gap={gap!r}, seed={seed})"
    elif kind == "uniform_random":
        _reject_extra(kind, params)
        phases = rng.uniform(-math.pi, math.pi, size)
        weights = rng.dirichlet(np.ones(size))
        label = f"uniform_random(size={size}, seed={seed})"
    elif kind == "clustered":
        clusters = int(params.pop("clusters", 3))
        width = float(params.pop("width", 0.05))
        _reject_extra(kind, params)
        if clusters < 1 or clusters > size:
            raise ModelParameterError("clusters must be in [1, size]")
        if width < 0:
            raise ModelParameterError("width must be nonnegative")
        centers = rng.uniform(-math.pi, math.pi, clusters)
        assignment = np.arange(size) % clusters
        phases = centers[assignment] + width * rng.standard_normal(size)
        weights = rng.dirichlet(np.ones(size))
        label = f"clustered(size={size}, clusters={clusters}, width={width}, seed={seed})"
    elif kind == "ground_dominated":
        eta = params.pop("eta", None)
        _reject_extra(kind, params)
        if eta is None:
            raise ModelParameterError("ground_dominated requires eta")
        eta = float(eta)
        if not 0.0 < eta <= 1.0:
            raise ModelParameterError("eta must lie in (0, 1]")
        if size == 1 and eta != 1.0:
            raise ModelParameterError("size 1 forces eta = 1")
        phases = rng.uniform(-math.pi, math.pi, size)
        if size == 1:
            weights = np.array([1.0])
        else:
            rest = rng.dirichlet(np.ones(size - 1)) * (1.0 - eta)
            weights = np.concatenate([[eta], rest])
        label = f"ground_dominated(size={size}, eta={eta}, seed={seed})"
    else:
        raise ModelParameterError(f"unknown model kind {kind!r}")

    return SpectralModel(phases, weights, label=label)


def _reject_extra(kind: str, params: dict):
    if params:
        raise ModelParameterError(f"unknown parameters for {kind}: {sorted(params)}")


def save_model(model: SpectralModel, path) -> None:
    """Write a model to a JSON file with exact float round-trip."""
    payload = {
        "label": model.label,
        "eigenphases": [float(v) for v in model.eigenphases],
        "weights": [float(v) for v in model.weights],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> SpectralModel:
    """Read a model file, enforcing the construction invariants."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ModelFormatError("model file must hold a JSON object")
    missing = {"eigenphases", "weights"} - payload.keys()
    if missing:
        raise ModelFormatError(f"model file missing fields: {sorted(missing)}")
    phases = payload["eigenphases"]
    weights = payload["weights"]
    if not isinstance(phases, list) or not isinstance(weights, list):
        raise ModelFormatError("eigenphases and weights must be arrays")
    try:
        return SpectralModel(phases, weights, label=str(payload.get("label", "")))
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc
