"""Problem instances: spikes, arbitrary frequency samples, PSF subspace, noise.

Measurements follow

    y_m = (sum_k a_k exp(-2j pi f_m tau_k)) * (s_m^T h),   m = 1..M,

which in lifted form reads ``y_m = e_m^T Z s_m`` with the rank-one matrix
``Z = x h^T`` and ``x = sum_k a_k c(tau_k)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "INSTANCE_SCHEMA",
    "SpikeTrain",
    "SamplingScheme",
    "SubspaceModel",
    "Instance",
    "InfeasibleSeparationError",
    "sample_frequencies",
    "steering_vector",
    "steering_matrix",
    "synthesize",
    "forward_operator",
    "measure_direct",
    "add_noise",
    "draw_spikes",
    "draw_subspace",
    "generate_instance",
    "instance_to_dict",
    "instance_from_dict",
    "save_instance",
    "load_instance",
    "encode_complex",
    "decode_complex",
]

INSTANCE_SCHEMA = "blindsr.instance/1"
MAX_REJECTION_ATTEMPTS = 10_000
DUPLICATE_TOL = 1e-9


class InfeasibleSeparationError(RuntimeError):
    """Rejection sampling could not place the spikes at the requested separation."""


@dataclass(frozen=True)
class SpikeTrain:
    """Normalized delays ``taus`` in [-1/2, 1/2] with complex amplitudes."""

    taus: np.ndarray
    amps: np.ndarray
    t_max: float = 1.0

    def __post_init__(self):
        taus = np.atleast_1d(np.asarray(self.taus, dtype=float))
        amps = np.atleast_1d(np.asarray(self.amps, dtype=complex))
        if taus.shape != amps.shape or taus.ndim != 1:
            raise ValueError("taus and amps must be 1-d arrays of equal length")
        if np.any(np.abs(taus) > 0.5):
            raise ValueError("normalized delays must lie in [-1/2, 1/2]")
        if np.any(amps == 0):
            raise ValueError("amplitudes must be nonzero")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "amps", amps)

    @property
    def k(self):
        return self.taus.size

    @property
    def delays(self):
        """Delays in the original time units, tau * t_max."""
        return self.taus * self.t_max

    @property
    def min_separation(self):
        if self.k < 2:
            return math.inf
        return float(np.min(np.diff(np.sort(self.taus))))


@dataclass(frozen=True)
class SamplingScheme:
    """Sorted frequency samples with ``freqs[0] = 0`` and ``freqs[-1] = b_max``."""

    freqs: np.ndarray
    b_max: float

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float)
        if freqs.ndim != 1 or freqs.size < 2:
            raise ValueError("need at least two frequency samples")
        if not self.b_max > 0:
            raise ValueError("b_max must be positive")
        if freqs[0] != 0.0 or freqs[-1] != self.b_max:
            raise ValueError("first sample must be 0 and last sample b_max")
        if np.any(np.diff(freqs) <= 0):
            raise ValueError("frequency samples must be strictly increasing")
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "b_max", float(self.b_max))

    @property
    def m(self):
        return self.freqs.size

    def normalized_differences(self):
        """(f_j - f_l) / b_max for every pair; always within [-1, 1]."""
        return (self.freqs[:, None] - self.freqs[None, :]) / self.b_max


@dataclass(frozen=True)
class SubspaceModel:
    """PSF samples ``g = S h`` with known ``S`` (M x L) and unknown ``h``."""

    s_matrix: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s_matrix)
        h = np.asarray(self.h)
        if s.ndim != 2 or h.shape != (s.shape[1],):
            raise ValueError("S must be M x L and h of length L")
        if s.shape[1] >= s.shape[0]:
            raise ValueError("subspace dimension L must be smaller than M")
        object.__setattr__(self, "s_matrix", s)
        object.__setattr__(self, "h", h)

    @property
    def l(self):
        return self.s_matrix.shape[1]

    @property
    def g(self):
        return self.s_matrix @ self.h


@dataclass(frozen=True)
class Instance:
    spikes: SpikeTrain
    scheme: SamplingScheme
    subspace: SubspaceModel
    z_true: np.ndarray
    y: np.ndarray
    sigma: float = 0.0
    seed: int | None = None
    snr_db: float = math.inf

    @property
    def m(self):
        return self.scheme.m

    @property
    def l(self):
        return self.subspace.l

    @property
    def noise(self):
        return self.y - forward_operator(self.z_true, self.subspace)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_frequencies(m, b_max, seed=None):
    """Endpoints 0 and ``b_max`` plus ``m - 2`` sorted uniform draws from (0, b_max).

    Draws closer than ``1e-9 * b_max`` to each other or to the endpoints
    are redrawn.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    if not b_max > 0:
        raise ValueError("b_max must be positive")
    rng = _rng(seed)
    tol = DUPLICATE_TOL * b_max
    interior = []
    while len(interior) < m - 2:
        draw = rng.uniform(0.0, b_max, size=m - 2 - len(interior))
        kept, prev = [], 0.0
        for f in np.sort(np.concatenate([interior, draw])):
            if f - prev > tol and b_max - f > tol:
                kept.append(f)
                prev = f
        interior = kept
    freqs = np.concatenate([[0.0], interior, [float(b_max)]])
    return SamplingScheme(freqs=freqs, b_max=b_max)


def steering_vector(tau, scheme):
    """c(tau) with entries exp(-2j pi f_m tau)."""
    if abs(tau) > 0.5:
        raise ValueError("tau must lie in [-1/2, 1/2]")
    return np.exp(-2j * np.pi * scheme.freqs * tau)


def steering_matrix(taus, scheme):
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    return np.exp(-2j * np.pi * np.outer(scheme.freqs, taus))


def synthesize(spikes, subspace, scheme):
    """Lifted matrix ``Z = x h^T`` and spectrum ``x = sum_k a_k c(tau_k)``."""
    x = steering_matrix(spikes.taus, scheme) @ spikes.amps
    z = np.outer(x, subspace.h)
    return z, x


def forward_operator(z, subspace):
    """y_m = (row m of Z) . s_m."""
    z = np.asarray(z)
    if z.shape != subspace.s_matrix.shape:
        raise ValueError(f"Z has shape {z.shape}, expected {subspace.s_matrix.shape}")
    return np.sum(z * subspace.s_matrix, axis=1)


def measure_direct(spikes, subspace, scheme):
    """Scalar-model measurements, one frequency at a time, without lifting."""
    out = np.empty(scheme.m, dtype=complex)
    for m, f in enumerate(scheme.freqs):
        xm = sum(a * np.exp(-2j * np.pi * f * t) for a, t in zip(spikes.amps, spikes.taus))
        out[m] = xm * (subspace.s_matrix[m] @ subspace.h)
    return out


def add_noise(y, snr_db, seed=None):
    """Add circular complex Gaussian noise at the requested SNR.

    The SNR is ``10 log10(||y||^2 / (M sigma^2))``; ``snr_db = inf`` returns
    ``y`` unchanged with ``sigma = 0``.
    """
    y = np.asarray(y, dtype=complex)
    if math.isinf(snr_db) and snr_db > 0:
        return y.copy(), 0.0
    power = np.vdot(y, y).real
    if power == 0:
        raise ValueError("cannot set an SNR for an all-zero signal")
    sigma = math.sqrt(power / (y.size * 10 ** (snr_db / 10)))
    rng = _rng(seed)
    noise = sigma / math.sqrt(2) * (
        rng.standard_normal(y.size) + 1j * rng.standard_normal(y.size)
    )
    return y + noise, sigma


def draw_spikes(k, min_sep, seed=None, amplitude="unit", t_max=1.0):
    """Uniform delays in [-1/2, 1/2] with pairwise separation >= ``min_sep``."""
    if k < 1:
        raise ValueError("need at least one spike")
    if k > 1 and (k - 1) * min_sep >= 1:
        raise InfeasibleSeparationError(f"{k} spikes cannot be {min_sep} apart")
    rng = _rng(seed)
    for _ in range(MAX_REJECTION_ATTEMPTS):
        taus = rng.uniform(-0.5, 0.5, size=k)
        if k == 1 or np.min(np.diff(np.sort(taus))) >= min_sep:
            break
    else:
        raise InfeasibleSeparationError(
            f"no admissible draw of {k} spikes at separation {min_sep} "
            f"after {MAX_REJECTION_ATTEMPTS} attempts"
        )
    phases = np.exp(2j * np.pi * rng.uniform(size=k))
    if amplitude == "unit":
        amps = phases
    elif amplitude == "gaussian":
        amps = np.abs(rng.standard_normal(k)) * phases
        amps[amps == 0] = phases[amps == 0]
    else:
        raise ValueError(f"unknown amplitude law {amplitude!r}")
    return SpikeTrain(taus=np.sort(taus), amps=amps[np.argsort(taus)], t_max=t_max)


def draw_subspace(m, l, seed=None, complex_valued=False):
    """i.i.d. standard Gaussian S (M x L) and h, redrawn until S has full column rank."""
    if l >= m:
        raise ValueError("subspace dimension L must be smaller than M")
    rng = _rng(seed)

    def gauss(shape):
        if complex_valued:
            return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)
        return rng.standard_normal(shape)

    while True:
        s = gauss((m, l))
        if np.linalg.matrix_rank(s) == l:
            break
    return SubspaceModel(s_matrix=s, h=gauss(l))


def generate_instance(
    k,
    l,
    m,
    b_max,
    min_sep=None,
    snr_db=math.inf,
    seed=0,
    scheme="random",
    amplitude="unit",
    complex_subspace=False,
):
    """Draw a complete, seeded problem instance.

    ``scheme`` is ``"random"`` (arbitrary sampling), ``"uniform"``
    (equispaced grid) or a ready-made :class:`SamplingScheme`.  The default
    separation floor is ``1/M``.
    """
    if l >= m:
        raise ValueError("subspace dimension L must be smaller than M")
    if min_sep is None:
        min_sep = 1.0 / m
    rng = np.random.default_rng(seed)
    if isinstance(scheme, SamplingScheme):
        sch = scheme
    elif scheme == "random":
        sch = sample_frequencies(m, b_max, rng)
    elif scheme == "uniform":
        sch = SamplingScheme(freqs=np.linspace(0.0, b_max, m), b_max=b_max)
    else:
        raise ValueError(f"unknown sampling scheme {scheme!r}")
    if sch.m != m:
        raise ValueError("sampling scheme has the wrong number of samples")
    spikes = draw_spikes(k, min_sep, rng, amplitude=amplitude)
    subspace = draw_subspace(m, l, rng, complex_valued=complex_subspace)
    z, _ = synthesize(spikes, subspace, sch)
    y_clean = forward_operator(z, subspace)
    y, sigma = add_noise(y_clean, snr_db, rng)
    return Instance(
        spikes=spikes,
        scheme=sch,
        subspace=subspace,
        z_true=z,
        y=y,
        sigma=sigma,
        seed=seed,
        snr_db=float(snr_db),
    )


# -- JSON encoding -----------------------------------------------------------


def encode_complex(a):
    """Nested lists of {"re": .., "im": ..} objects."""
    a = np.asarray(a, dtype=complex)
    if a.ndim == 0:
        return {"re": float(a.real), "im": float(a.imag)}
    return [encode_complex(v) for v in a]


def decode_complex(obj):
    if isinstance(obj, dict):
        return complex(obj["re"], obj["im"])
    return np.array([decode_complex(v) for v in obj], dtype=complex)


def _real_or_complex(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return {"complex": encode_complex(a)}
    return {"real": a.tolist()}


def _decode_array(obj):
    if "complex" in obj:
        return decode_complex(obj["complex"])
    return np.array(obj["real"], dtype=float)


def _float(x):
    # JSON has no infinity; keep it readable
    return "inf" if math.isinf(x) else x


def instance_to_dict(inst):
    return {
        "schema": INSTANCE_SCHEMA,
        "seed": inst.seed,
        "sigma": inst.sigma,
        "snr_db": _float(inst.snr_db),
        "spikes": {
            "taus": inst.spikes.taus.tolist(),
            "amps": encode_complex(inst.spikes.amps),
            "t_max": inst.spikes.t_max,
        },
        "scheme": {"freqs": inst.scheme.freqs.tolist(), "b_max": inst.scheme.b_max},
        "subspace": {
            "s_matrix": _real_or_complex(inst.subspace.s_matrix),
            "h": _real_or_complex(inst.subspace.h),
        },
        "z_true": encode_complex(inst.z_true),
        "y": encode_complex(inst.y),
    }


def instance_from_dict(obj):
    schema = obj.get("schema")
    if schema != INSTANCE_SCHEMA:
        raise ValueError(f"unsupported instance schema {schema!r}")
    snr = obj.get("snr_db", "inf")
    return Instance(
        spikes=SpikeTrain(
            taus=np.array(obj["spikes"]["taus"], dtype=float),
            amps=decode_complex(obj["spikes"]["amps"]),
            t_max=obj["spikes"].get("t_max", 1.0),
        ),
        scheme=SamplingScheme(
            freqs=np.array(obj["scheme"]["freqs"], dtype=float),
            b_max=obj["scheme"]["b_max"],
        ),
        subspace=SubspaceModel(
            s_matrix=_decode_array(obj["subspace"]["s_matrix"]),
            h=_decode_array(obj["subspace"]["h"]),
        ),
        z_true=decode_complex(obj["z_true"]),
        y=decode_complex(obj["y"]),
        sigma=float(obj["sigma"]),
        seed=obj.get("seed"),
        snr_db=math.inf if snr == "inf" else float(snr),
    )


def save_instance(inst, path):
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh, indent=1)


def load_instance(path):
    with open(path) as fh:
        return instance_from_dict(json.load(fh))
