"""Shot-noise simulation at the Bernoulli level.

Every measurement the estimators need reduces to a two-outcome projection
whose success probability is known in closed form from the spectral model:

  * projective measurement onto |psi><psi| after applying U^k or a sandwich
    operator: success probability is the squared overlap magnitude;
  * Hadamard test on U^k: P(control = 0) = (1 + Re<psi|U^k|psi>) / 2, and
    the phase-shifted variant exposes the imaginary part.

Sampling therefore draws binomial success counts instead of simulating a
state vector, which keeps powers up to 10^6 tractable while remaining
distribution-exact shot by shot.

Randomness is organized as path-keyed streams: a stream is a pure function
of (master_seed, path), so results are bit-identical for a fixed seed no
matter in which order, or on which worker, the measurements execute.  A
stream addresses one measurement context; derive a child per purpose rather
than reusing a path.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .spectral import (
    Amplitude,
    SpectralModel,
    exact_amplitude,
    exact_sandwich_magnitude,
    exact_two_layer_magnitude,
)


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream keyed by (master_seed, path).

    Streams with distinct paths are statistically independent (numpy
    SeedSequence spawn keys); identical (seed, path) reproduce identical
    draws.
    """

    master_seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if self.master_seed < 0:
            raise ValueError("master_seed must be nonnegative")
        if any(int(v) < 0 for v in self.path):
            raise ValueError("path entries must be nonnegative integers")

    def child(self, *indices: int) -> "RngStream":
        return RngStream(self.master_seed, self.path + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(seq))


@dataclass
class UsageLedger:
    """Running cost account of a simulation.

    u_applications counts applications of U (the head-line cost figure),
    sprotis_applications counts selective-phase-rotation layers, and
    w_applications counts state-preparation uses of W / W-dagger, which are
    tracked separately and excluded from the head-line totals.  All counters
    are monotonically non-decreasing; updates are serialized by a lock so
    concurrent recorders cannot interleave partial updates.
    """

    u_applications: int = 0
    sprotis_applications: int = 0
    w_applications: int = 0
    shots: int = 0
    _lock: threading.Lock = field(
        default_factory=threading.Lock, repr=False, compare=False
    )

    def record(self, u: int, sprotis: int, w: int, shots: int) -> None:
        if min(u, sprotis, w, shots) < 0:
            raise ValueError("ledger increments must be nonnegative")
        with self._lock:
            self.u_applications += u
            self.sprotis_applications += sprotis
            self.w_applications += w
            self.shots += shots

    def merge(self, other: "UsageLedger") -> None:
        self.record(
            other.u_applications,
            other.sprotis_applications,
            other.w_applications,
            other.shots,
        )

    def snapshot(self) -> "UsageLedger":
        with self._lock:
            return UsageLedger(
                self.u_applications,
                self.sprotis_applications,
                self.w_applications,
                self.shots,
            )

    def as_dict(self) -> dict:
        return {
            "u_applications": self.u_applications,
            "sprotis_applications": self.sprotis_applications,
            "w_applications": self.w_applications,
            "shots": self.shots,
        }


@dataclass(frozen=True)
class PowerObservable:
    """Projective overlap measurement after applying U^k."""

    k: int

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("power must be nonnegative")

    @property
    def u_cost(self) -> int:
        return self.k

    @property
    def sprotis_cost(self) -> int:
        return 0

    def magnitude(self, model: SpectralModel) -> float:
        return exact_amplitude(model, self.k).modulus


@dataclass(frozen=True)
class SandwichObservable:
    """Projective overlap measurement after applying U^a R_psi^phi U^b."""

    a: int
    b: int
    phi: float

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError("powers must be nonnegative")

    @property
    def u_cost(self) -> int:
        return self.a + self.b

    @property
    def sprotis_cost(self) -> int:
        return 1

    def magnitude(self, model: SpectralModel) -> float:
        return exact_sandwich_magnitude(model, self.a, self.b, self.phi)


@dataclass(frozen=True)
class TwoLayerObservable:
    """Projective overlap after U^a R^{phi1} U^b R^{phi2} U^c."""

    a: int
    b: int
    c: int
    phi1: float
    phi2: float

    def __post_init__(self):
        if min(self.a, self.b, self.c) < 0:
            raise ValueError("powers must be nonnegative")

    @property
    def u_cost(self) -> int:
        return self.a + self.b + self.c

    @property
    def sprotis_cost(self) -> int:
        return 2

    def magnitude(self, model: SpectralModel) -> float:
        return exact_two_layer_magnitude(
            model, self.a, self.b, self.c, self.phi1, self.phi2
        )


def sample_overlap_probability(
    model: SpectralModel,
    observable,
    shots: int,
    rng: RngStream,
    ledger: UsageLedger,
) -> float:
    """Success fraction of `shots` projective measurements onto |psi><psi|.

    Each shot prepares |psi>, applies the observable's operator, and projects
    back; the ledger is charged shots * (power total) applications of U plus
    two W uses per shot (prepare and un-prepare).
    """
    shots = int(shots)
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if shots > (1 << 62):
        raise ValueError("shot count exceeds the sampler domain (2^62)")
    magnitude = observable.magnitude(model)
    p = min(max(magnitude * magnitude, 0.0), 1.0)
    successes = int(rng.generator().binomial(shots, p))
    ledger.record(
        u=shots * observable.u_cost,
        sprotis=shots * observable.sprotis_cost,
        w=2 * shots,
        shots=shots,
    )
    return successes / shots


def estimate_magnitude(
    model: SpectralModel,
    observable,
    shots: int,
    rng: RngStream,
    ledger: UsageLedger,
) -> float:
    """Magnitude estimate sqrt(success fraction).

    Biased low at small samples by O(1/(r * shots)) because the square root
    is concave; consumers that care should budget shots accordingly.
    """
    fraction = sample_overlap_probability(model, observable, shots, rng, ledger)
    return math.sqrt(max(fraction, 0.0))


def hadamard_test_estimate(
    model: SpectralModel,
    k: int,
    shots: int,
    rng: RngStream,
    ledger: UsageLedger,
) -> Amplitude:
    """Hadamard-test estimate of <psi|U^k|psi> as an Amplitude.

    The shot budget is split half and half between the real-part circuit,
    P(0) = (1 + Re)/2, and the phase-shifted imaginary-part circuit,
    P(0) = (1 + Im)/2; an odd remainder shot goes to the real part.  k = 0
    is the identity: its overlap is known to be 1 without measuring, so it
    is returned exactly and the ledger is left untouched.
    """
    k = int(k)
    if k < 0:
        raise ValueError("power must be nonnegative")
    if k == 0:
        return Amplitude(1.0, 0.0)
    shots = int(shots)
    if shots < 2:
        raise ValueError("hadamard test needs at least 2 shots")
    z = exact_amplitude(model, k)
    zc = z.complex
    shots_im = shots // 2
    shots_re = shots - shots_im
    gen = rng.generator()
    p_re = min(max((1.0 + zc.real) / 2.0, 0.0), 1.0)
    p_im = min(max((1.0 + zc.imag) / 2.0, 0.0), 1.0)
    re_hat = 2.0 * int(gen.binomial(shots_re, p_re)) / shots_re - 1.0
    im_hat = 2.0 * int(gen.binomial(shots_im, p_im)) / shots_im - 1.0
    ledger.record(u=shots * k, sprotis=0, w=shots, shots=shots)
    raw = math.hypot(re_hat, im_hat)
    if raw < 1e-14:
        return Amplitude(raw, 0.0, phase_defined=False)
    return Amplitude(min(raw, 1.0), _wrap_atan2(im_hat, re_hat))


def _wrap_atan2(y: float, x: float) -> float:
    # atan2 returns (-pi, pi]; fold the single endpoint pi onto -pi.
    angle = math.atan2(y, x)
    return -math.pi if angle == math.pi else angle
