"""Measurement assemblages and the example inputs used throughout the package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from seocert import qops


class AssemblageError(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementAssemblage:
    """A family of POVMs ``{M_{a|x}}`` stored as an array of shape (n_m, n_a, d, d)."""

    effects: np.ndarray

    def __post_init__(self):
        eff = np.array(self.effects, dtype=complex)
        if eff.ndim != 4 or eff.shape[2] != eff.shape[3]:
            raise AssemblageError(f"effects must have shape (n_m, n_a, d, d), got {eff.shape}")
        eff.setflags(write=False)
        object.__setattr__(self, "effects", eff)

    @property
    def n_m(self) -> int:
        return self.effects.shape[0]

    @property
    def n_a(self) -> int:
        return self.effects.shape[1]

    @property
    def d(self) -> int:
        return self.effects.shape[2]

    def __getitem__(self, xa):
        x, a = xa
        return self.effects[x, a]

    def normalization_error(self) -> float:
        eye = np.eye(self.d)
        return float(np.abs(self.effects.sum(axis=1) - eye).max())

    def is_valid(self, tol: float = qops.TOL_PSD) -> bool:
        if self.normalization_error() > tol:
            return False
        return all(qops.is_psd(e, tol) for e in self.effects.reshape(-1, self.d, self.d))

    def validate(self, tol: float = qops.TOL_PSD) -> "MeasurementAssemblage":
        if not self.is_valid(tol):
            raise AssemblageError("effects are not PSD or do not sum to the identity per setting")
        return self

    def transpose(self) -> "MeasurementAssemblage":
        return MeasurementAssemblage(np.swapaxes(self.effects, -1, -2))

    def subset(self, settings) -> "MeasurementAssemblage":
        return MeasurementAssemblage(self.effects[list(settings)])


def trivial(d: int, n_m: int, n_a: int) -> MeasurementAssemblage:
    eff = np.broadcast_to(np.eye(d) / n_a, (n_m, n_a, d, d))
    return MeasurementAssemblage(eff)


def _is_prime(n: int) -> bool:
    return n >= 2 and all(n % p for p in range(2, int(n ** 0.5) + 1))


def mub_vectors(d: int) -> np.ndarray:
    """All d+1 mutually unbiased bases for prime ``d``; shape (d+1, d, d), vectors as rows.

    Basis 0 is the computational basis.  For odd primes the remaining bases have
    components ``ω^{b n² + j n}/√d``; for d=2 they are the σ_x and σ_y eigenbases.
    """
    if not _is_prime(d):
        raise AssemblageError(f"MUB construction only implemented for prime d, got {d}")
    bases = [np.eye(d, dtype=complex)]
    n = np.arange(d)
    if d == 2:
        for phase in (1, 1j):
            bases.append(np.array([[1, phase], [1, -phase]]) / np.sqrt(2))
    else:
        w = np.exp(2j * np.pi / d)
        for b in range(d):
            bases.append(np.array([w ** ((b * n * n + j * n) % d) for j in range(d)]) / np.sqrt(d))
    return np.array(bases)


def mub_assemblage(d: int, n_m: int) -> MeasurementAssemblage:
    """Rank-one projective measurements in the first ``n_m`` mutually unbiased bases."""
    if not 1 <= n_m <= d + 1:
        raise AssemblageError(f"need 1 <= n_m <= d+1 = {d + 1}, got {n_m}")
    vecs = mub_vectors(d)[:n_m]
    eff = np.einsum("xai,xaj->xaij", vecs, vecs.conj())
    return MeasurementAssemblage(eff)


def depolarize(m: MeasurementAssemblage, t: float) -> MeasurementAssemblage:
    """``t M_{a|x} + (1 - t) I / n_a``."""
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise AssemblageError(f"visibility must lie in [0, 1], got {t}")
    return MeasurementAssemblage(t * m.effects + (1 - t) * np.eye(m.d) / m.n_a)


def maximally_entangled(d: int) -> np.ndarray:
    if d < 2:
        raise AssemblageError("maximally entangled state needs d >= 2")
    phi = np.eye(d).reshape(-1) / np.sqrt(d)
    return np.outer(phi, phi).astype(complex)


HOLLOW_TRIANGLE_VISIBILITY = 0.7


def hollow_triangle() -> MeasurementAssemblage:
    """Noisy σ_x, σ_y, σ_z measurements: pairwise jointly measurable, triplewise not."""
    m = mub_assemblage(2, 3).subset([1, 2, 0])
    return depolarize(m, HOLLOW_TRIANGLE_VISIBILITY)


# ---------------------------------------------------------------------------
# Random instances for property tests and positive controls.

def random_state(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_povm(d: int, n_out: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random POVM with ``n_out`` effects of the given rank (full rank by default)."""
    rank = d if rank is None else rank
    raw = []
    for _ in range(n_out):
        g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
        raw.append(g @ g.conj().T)
    raw = np.array(raw)
    _, s_inv_sqrt = qops.psd_sqrt_pinv(raw.sum(axis=0))
    eff = s_inv_sqrt @ raw @ s_inv_sqrt
    return np.array([qops.hermitize(e) for e in eff])


def random_assemblage(d: int, n_m: int, n_a: int, rng: np.random.Generator,
                      rank: int | None = None) -> MeasurementAssemblage:
    return MeasurementAssemblage(np.array([random_povm(d, n_a, rng, rank) for _ in range(n_m)]))
