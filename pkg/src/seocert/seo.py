"""Bob's state assemblage and its steering-equivalent observables (SEO)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from seocert import qops
from seocert.scenarios import AssemblageError, MeasurementAssemblage


@dataclass(frozen=True)
class StateAssemblage:
    """Conditional states ``ρ_{a|x}`` (shape (n_m, n_a, d_B, d_B)) and Bob's marginal ``ρ_B``."""

    members: np.ndarray
    reduced: np.ndarray

    def __post_init__(self):
        members = np.array(self.members, dtype=complex)
        reduced = np.array(self.reduced, dtype=complex)
        members.setflags(write=False)
        reduced.setflags(write=False)
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "reduced", reduced)

    @property
    def d_B(self) -> int:
        return self.reduced.shape[0]

    def validate(self, tol: float = qops.TOL_PSD) -> "StateAssemblage":
        if abs(np.trace(self.reduced) - 1) > 1e-10:
            raise AssemblageError("reduced state must have unit trace")
        if np.abs(self.members.sum(axis=1) - self.reduced).max() > tol:
            raise AssemblageError("no-signalling violated: sum_a rho_{a|x} differs from rho_B")
        for rho in self.members.reshape(-1, self.d_B, self.d_B):
            if not qops.is_psd(rho, tol):
                raise AssemblageError("conditional state is not PSD")
        return self


def _check_state(state: np.ndarray, d_A: int) -> int:
    state = np.asarray(state)
    n = state.shape[0]
    if state.ndim != 2 or n != state.shape[1] or n % d_A:
        raise AssemblageError(f"state of shape {state.shape} incompatible with d_A = {d_A}")
    if not qops.is_psd(state) or abs(np.trace(state) - 1) > 1e-10:
        raise AssemblageError("shared state must be PSD with unit trace")
    return n // d_A


def _conditional(state: np.ndarray, effects: np.ndarray, d_A: int, d_B: int) -> np.ndarray:
    # tr_A[(E ⊗ I) ρ] = Σ_ij E_ij ρ[(j,·),(i,·)], done for a stack of E at once
    r = np.asarray(state).reshape(d_A, d_B, d_A, d_B)
    return np.einsum("...ij,jbia->...ba", effects, r)


def steer(state: np.ndarray, m: MeasurementAssemblage) -> StateAssemblage:
    """``ρ_{a|x} = tr_A[(M_{a|x} ⊗ I) ρ_AB]``."""
    d_B = _check_state(state, m.d)
    members = _conditional(state, m.effects, m.d, d_B)
    reduced = qops.partial_trace(state, [m.d, d_B], keep=[1])
    return StateAssemblage(members, reduced).validate()


def _whitening(reduced: np.ndarray) -> np.ndarray:
    """Rows map B onto supp(ρ_B), followed by ρ̃_B^{-1/2}; square when ρ_B is full rank."""
    w, v = qops.support(reduced)
    if len(w) == reduced.shape[0]:
        _, inv_sqrt = qops.psd_sqrt_pinv(reduced)
        return inv_sqrt
    return (v / np.sqrt(w)).conj().T


def _apply_whitening(w: np.ndarray, ops: np.ndarray) -> np.ndarray:
    out = w @ ops @ w.conj().T
    return (out + np.swapaxes(out, -1, -2).conj()) / 2


def seo(sa: StateAssemblage) -> MeasurementAssemblage:
    """Steering-equivalent observables ``ρ̃_B^{-1/2} ρ̃_{a|x} ρ̃_B^{-1/2}`` on supp(ρ_B)."""
    sa.validate()
    w = _whitening(sa.reduced)
    return MeasurementAssemblage(_apply_whitening(w, sa.members))


def seo_simulators(b: MeasurementAssemblage, state: np.ndarray) -> MeasurementAssemblage:
    """Images of Alice-side POVMs ``B_{b|y}`` under the same steer-then-whiten map."""
    d_B = _check_state(state, b.d)
    reduced = qops.partial_trace(state, [b.d, d_B], keep=[1])
    w = _whitening(reduced)
    return MeasurementAssemblage(_apply_whitening(w, _conditional(state, b.effects, b.d, d_B)))


def seo_rank(state: np.ndarray, d_A: int) -> int:
    d_B = _check_state(state, d_A)
    return len(qops.support(qops.partial_trace(state, [d_A, d_B], keep=[1]))[0])
