#!/usr/bin/env python3
"""
ansatz.py - Neural backflow wavefunction for electrons in a moire cell

    psi(R) = D[phi_a(q_b)] exp(J_cck(R) + J_net(R)),   q_b = r_b + r_s F_bf(h_b)

D is either the product of spin-up and spin-down plane-wave determinants
(slater mode) or the paired determinant det[Phi_up S Phi_down^T] (bcs mode).

This module handles:
- The supercell plane-wave basis and its non-interacting starting occupation
- Parameter initialization
- Determinant heads, backflow, neural and cusp Jastrows
- log psi as (phase, log|psi|)
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np

from lattice import SimulationCell, minimum_image
from networks import (
    ONE_BODY_FEATURES,
    HiddenState,
    NetworkShape,
    PairFeatures,
    init_message_passing,
    init_mlp,
    message_pass,
    mlp,
    pair_features,
    safe_norm,
)

jax.config.update("jax_enable_x64", True)

MODES = ("slater", "bcs")
SPIN_SECTORS = ("up", "down")

# final-layer gain of the backflow and Jastrow heads
HEAD_GAIN = 0.1


class LogAmplitude(NamedTuple):
    phase: jax.Array
    log_abs: jax.Array

    @property
    def value(self):
        return self.log_abs + 1j * self.phase


@dataclass(frozen=True)
class Ansatz:
    """Static description of the wavefunction; parameters live in a separate pytree."""
    cell: SimulationCell
    mode: str
    planewaves: np.ndarray
    occupation: dict
    network: NetworkShape = field(default_factory=NetworkShape)
    n_orb: int = 0
    backflow_widths: tuple = (32, 2)
    jastrow_widths: tuple = (32, 32, 1)
    use_backflow: bool = True
    use_neural_jastrow: bool = True
    use_cck: bool = True
    cusp_strength: float = 0.0
    notes: tuple = ()

    @property
    def n_planewaves(self) -> int:
        return len(self.planewaves)

    @property
    def uses_network(self) -> bool:
        return self.use_backflow or self.use_neural_jastrow

    def sector_sizes(self) -> dict:
        return {"up": self.cell.n_up, "down": self.cell.n_down}


def _shells(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sort vectors by (|G|, angle) and label the degenerate shells."""
    lengths = np.linalg.norm(vectors, axis=1)
    angles = np.mod(np.arctan2(vectors[:, 1], vectors[:, 0]), 2 * np.pi)
    scale = max(lengths.max(), 1.0)
    order = np.lexsort((np.round(angles, 10), np.round(lengths / scale, 10)))
    sorted_lengths = np.round(lengths[order] / scale, 10)
    shell_ids = np.concatenate([[0], np.cumsum(np.diff(sorted_lengths) > 0)])
    return vectors[order], shell_ids


def planewave_set(cell: SimulationCell, n_min: int) -> np.ndarray:
    """Smallest set of complete shells of supercell reciprocal vectors with at least n_min members."""
    b = cell.reciprocal_matrix
    reach = int(np.ceil(np.sqrt(n_min))) + 3
    height = abs(np.linalg.det(b)) / np.max(np.linalg.norm(b, axis=1))
    while True:
        idx = np.arange(-reach, reach + 1)
        m = np.array([[i, j] for i in idx for j in idx], dtype=float)
        vectors, shell_ids = _shells(m @ b)
        # a shell is trustworthy only if it lies inside the searched disc
        radius = 0.99 * reach * height
        inside = np.linalg.norm(vectors, axis=1) < radius
        counts = np.cumsum(np.bincount(shell_ids))
        closed = np.searchsorted(counts, n_min)
        if closed < len(counts) and inside[counts[closed] - 1]:
            return vectors[: counts[closed]]
        reach *= 2


def occupied_planewaves(planewaves: np.ndarray, n: int) -> tuple[list, Optional[str]]:
    """
    Indices of the n lowest plane waves. A partially filled shell is sampled at
    evenly spaced angles so the occupied set stays as symmetric as possible.
    """
    if n == 0:
        return [], None
    _, shell_ids = _shells(planewaves)
    full = np.flatnonzero(np.cumsum(np.bincount(shell_ids)) <= n)
    n_full_shells = len(full)
    chosen = list(np.flatnonzero(shell_ids < n_full_shells))
    remaining = n - len(chosen)
    if remaining == 0:
        return chosen, None
    shell = np.flatnonzero(shell_ids == n_full_shells)
    picks = [shell[int(np.floor(k * len(shell) / remaining))] for k in range(remaining)]
    note = (
        f"open shell: {remaining} of {len(shell)} degenerate plane waves at "
        f"|G|={np.linalg.norm(planewaves[shell[0]]):.6g} occupied (members {[int(p) for p in picks]})"
    )
    return chosen + [int(p) for p in picks], note


def build_ansatz(
    cell: SimulationCell,
    mode: str = "slater",
    n_planewaves: Optional[int] = None,
    network: Optional[NetworkShape] = None,
    n_orb: Optional[int] = None,
    use_backflow: bool = True,
    use_neural_jastrow: bool = True,
    use_cck: bool = True,
    cusp_strength: Optional[float] = None,
    jastrow_widths: tuple = (32, 32, 1),
    backflow_widths: tuple = (32, 2),
) -> Ansatz:
    """
    cusp_strength is the Coulomb prefactor the cusp Jastrow cancels (the
    Hamiltonian r_s, or 0 for softened interactions); defaults to cell.r_s.
    """
    if mode not in MODES:
        raise ValueError(f"Unknown ansatz mode '{mode}'. Choose from: {', '.join(MODES)}")
    n_max = max(cell.n_up, cell.n_down)
    if mode == "bcs":
        if cell.n_up != cell.n_down:
            raise ValueError(f"bcs mode needs n_up == n_down, got ({cell.n_up}, {cell.n_down})")
        n_orb = cell.n_electrons if n_orb is None else int(n_orb)
        if n_orb < cell.n_up:
            raise ValueError(f"bcs mode needs n_orb >= n_up ({cell.n_up}), got {n_orb}")
    else:
        n_orb = 0

    n_min = max(4 * n_max, n_orb, 1) if n_planewaves is None else int(n_planewaves)
    if n_min < max(n_max, n_orb):
        raise ValueError(f"{n_min} plane waves cannot hold {max(n_max, n_orb)} orbitals")
    planewaves = planewave_set(cell, n_min)

    occupation, notes = {}, []
    for sector, n in (("up", cell.n_up), ("down", cell.n_down)):
        indices, note = occupied_planewaves(planewaves, n)
        occupation[sector] = tuple(indices)
        if note:
            notes.append(f"{sector}: {note}")

    return Ansatz(
        cell=cell,
        mode=mode,
        planewaves=planewaves,
        occupation=occupation,
        network=network or NetworkShape(),
        n_orb=n_orb,
        backflow_widths=tuple(backflow_widths),
        jastrow_widths=tuple(jastrow_widths),
        use_backflow=use_backflow,
        use_neural_jastrow=use_neural_jastrow,
        use_cck=use_cck,
        cusp_strength=cell.r_s if cusp_strength is None else float(cusp_strength),
        notes=tuple(notes),
    )


def _coefficients(rows: list, n_planewaves: int) -> dict:
    c = np.zeros((len(rows), n_planewaves))
    c[np.arange(len(rows)), rows] = 1.0
    return {"re": jnp.asarray(c), "im": jnp.zeros_like(jnp.asarray(c))}


def init_params(key, ansatz: Ansatz) -> dict:
    """
    Start from the non-interacting plane-wave occupation. In bcs mode the first
    n_up orbitals carry pairing amplitude 1 and the rest 0, which is the RHF state.
    """
    k_net, k_bf, k_jas = jax.random.split(key, 3)
    params = {}
    if ansatz.mode == "slater":
        params["orbitals"] = {
            sector: _coefficients(list(ansatz.occupation[sector]), ansatz.n_planewaves)
            for sector, n in ansatz.sector_sizes().items() if n > 0
        }
    else:
        occupied = list(ansatz.occupation["up"])
        rest = [k for k in range(ansatz.n_planewaves) if k not in occupied]
        rows = (occupied + rest)[: ansatz.n_orb]
        pairing = np.zeros(ansatz.n_orb)
        pairing[: ansatz.cell.n_up] = 1.0
        params["bcs"] = {
            "up": _coefficients(rows, ansatz.n_planewaves),
            "down": _coefficients(rows, ansatz.n_planewaves),
            "pairing": jnp.asarray(pairing),
        }

    width = ansatz.network.one_body_width
    if ansatz.uses_network:
        params["layers"] = init_message_passing(k_net, ansatz.network)
    if ansatz.use_backflow:
        params["backflow"] = init_mlp(k_bf, width, list(ansatz.backflow_widths), final_gain=HEAD_GAIN)
    if ansatz.use_neural_jastrow:
        params["jastrow"] = init_mlp(
            k_jas, ONE_BODY_FEATURES + width, list(ansatz.jastrow_widths), final_gain=HEAD_GAIN)
    if ansatz.use_cck:
        params["cck"] = {"like": jnp.asarray(0.0), "unlike": jnp.asarray(0.0)}
    return params


def complex_coefficients(c: dict):
    return c["re"] + 1j * c["im"]


def orbital_matrix(coefficients: dict, planewaves, quasipositions):
    """Phi[b, a] = sum_k c_ak exp(i G_k . q_b); coefficients is a {"re", "im"} pair."""
    waves = jnp.exp(1j * (quasipositions @ jnp.asarray(planewaves).T))
    return waves @ complex_coefficients(coefficients).T


def _slogdet(matrix) -> LogAmplitude:
    sign, log_abs = jnp.linalg.slogdet(matrix)
    return LogAmplitude(phase=jnp.angle(sign), log_abs=log_abs)


def _split(ansatz: Ansatz, quasipositions):
    n_up = ansatz.cell.n_up
    return {"up": quasipositions[:n_up], "down": quasipositions[n_up:]}


def log_slater(ansatz: Ansatz, params: dict, quasipositions) -> LogAmplitude:
    """log det Phi_up + log det Phi_down; an empty spin sector contributes 0."""
    phase, log_abs = jnp.asarray(0.0), jnp.asarray(0.0)
    for sector, q in _split(ansatz, quasipositions).items():
        if q.shape[0] == 0:
            continue
        det = _slogdet(orbital_matrix(params["orbitals"][sector], ansatz.planewaves, q))
        phase, log_abs = phase + det.phase, log_abs + det.log_abs
    return LogAmplitude(phase=phase, log_abs=log_abs)


def pairing_matrix(ansatz: Ansatz, params: dict, quasipositions):
    """Phi_up diag(S) Phi_down^T, shape (n_up, n_down)."""
    sectors = _split(ansatz, quasipositions)
    bcs = params["bcs"]
    phi_up = orbital_matrix(bcs["up"], ansatz.planewaves, sectors["up"])
    phi_down = orbital_matrix(bcs["down"], ansatz.planewaves, sectors["down"])
    return (phi_up * bcs["pairing"]) @ phi_down.T


def log_bcs(ansatz: Ansatz, params: dict, quasipositions) -> LogAmplitude:
    return _slogdet(pairing_matrix(ansatz, params, quasipositions))


def occupation_amplitudes(params: dict) -> np.ndarray:
    """Singular values (descending) of F = A_down^T diag(S) A_up."""
    bcs = params["bcs"]
    a_up = np.asarray(complex_coefficients(bcs["up"]))
    a_down = np.asarray(complex_coefficients(bcs["down"]))
    pairing = np.asarray(bcs["pairing"])
    f = a_down.T @ (pairing[:, None] * a_up)
    return np.linalg.svd(f, compute_uv=False)


def hidden_state(ansatz: Ansatz, params: dict, features: PairFeatures) -> HiddenState:
    return message_pass(params["layers"], features, ansatz.network)


def backflow(ansatz: Ansatz, params: dict, configuration, hidden: Optional[HiddenState] = None):
    """Quasipositions q_b = r_b + r_s F_bf(h_b)."""
    positions = jnp.asarray(configuration).reshape(-1, 2)
    if not ansatz.use_backflow:
        return positions
    if hidden is None:
        hidden = hidden_state(ansatz, params, pair_features(ansatz.cell, positions))
    return positions + ansatz.cell.r_s * mlp(params["backflow"], hidden.one_body)


def neural_jastrow(params: dict, features: PairFeatures, hidden: HiddenState):
    """sum_i F_J([v_i, h_i])"""
    inputs = jnp.concatenate([features.one_body, hidden.one_body], axis=-1)
    return jnp.sum(mlp(params["jastrow"], inputs))


def cck_u(r, cutoff, slope, beta):
    """
    u(r) = (1 - x)^3 (slope L / 3 + beta x^2), x = r / L, and 0 for r >= L.

    u'(0) = -slope and u, u', u'' vanish at r = L.
    """
    x = r / cutoff
    inside = x < 1.0
    one_minus = jnp.where(inside, 1.0 - x, 0.0)
    return jnp.where(inside, one_minus**3 * (slope * cutoff / 3 + beta * x**2), 0.0)


def cck_jastrow(ansatz: Ansatz, params: dict, configuration):
    """
    -sum_{i<j} u(r_ij) on minimum-imaged distances measured in units of r_s a_B*.
    Unlike-spin pairs take slope r_s and like-spin pairs r_s / 3.
    """
    cell = ansatz.cell
    positions = jnp.asarray(configuration).reshape(-1, 2)
    n = positions.shape[0]
    if n < 2:
        return jnp.asarray(0.0)
    i, j = np.triu_indices(n, k=1)
    r = safe_norm(minimum_image(cell, positions[i] - positions[j])) / cell.r_s
    like = cell.spins[i] == cell.spins[j]
    slope = np.where(like, ansatz.cusp_strength / 3, ansatz.cusp_strength)
    beta = jnp.where(jnp.asarray(like), params["cck"]["like"], params["cck"]["unlike"])
    return -jnp.sum(cck_u(r, cell.ws_radius / cell.r_s, jnp.asarray(slope), beta))


def log_psi_parts(ansatz: Ansatz, params: dict, configuration) -> dict:
    """Each term of log psi separately: determinant (LogAmplitude), cck, neural."""
    positions = jnp.asarray(configuration).reshape(-1, 2)
    features, hidden = None, None
    if ansatz.uses_network:
        features = pair_features(ansatz.cell, positions)
        hidden = hidden_state(ansatz, params, features)

    quasipositions = backflow(ansatz, params, positions, hidden)
    head = log_slater if ansatz.mode == "slater" else log_bcs
    return {
        "determinant": head(ansatz, params, quasipositions),
        "cck": cck_jastrow(ansatz, params, positions) if ansatz.use_cck else jnp.asarray(0.0),
        "neural": neural_jastrow(params, features, hidden) if ansatz.use_neural_jastrow else jnp.asarray(0.0),
    }


def log_psi(ansatz: Ansatz, params: dict, configuration) -> LogAmplitude:
    parts = log_psi_parts(ansatz, params, configuration)
    det = parts["determinant"]
    return LogAmplitude(phase=det.phase, log_abs=det.log_abs + parts["cck"] + parts["neural"])


def make_log_psi(ansatz: Ansatz):
    """(params, positions) -> LogAmplitude closure over a fixed ansatz."""
    def fn(params, positions):
        return log_psi(ansatz, params, positions)
    return fn


def zero_network(params: dict) -> dict:
    """Copy of params with message-passing, backflow and Jastrow weights set to zero."""
    zeroed = dict(params)
    for name in ("layers", "backflow", "jastrow"):
        if name in zeroed:
            zeroed[name] = jax.tree_util.tree_map(jnp.zeros_like, zeroed[name])
    return zeroed


def free_fermion_energy(ansatz: Ansatz) -> float:
    """sum over occupied plane waves of r_s^2 |G|^2 / 2 (W, whole cell), for the starting occupation."""
    total = 0.0
    for sector in SPIN_SECTORS:
        g = ansatz.planewaves[list(ansatz.occupation[sector])]
        total += 0.5 * ansatz.cell.r_s**2 * float(np.sum(g**2))
    return total
