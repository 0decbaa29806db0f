"""Differentiable training losses (tensor-domain mirrors of metrics)."""

from __future__ import annotations

from itertools import permutations

import numpy as np

from .tensor import Tensor

LOG10 = float(np.log(10.0))


def t_neg_snr_loss(est: Tensor, ref: np.ndarray, cap_db: float = 25.0,
                   scale_invariant: bool = True) -> Tensor:
    """Soft-capped negative SNR between a graph tensor and a fixed reference.

    With scale_invariant=True the reference is rescaled by the optimal gain
    alpha = <est, ref>/|ref|^2 (gradient flows through alpha), matching the
    scale-invariant metric.
    """
    ref = np.asarray(ref, dtype=np.float64).reshape(-1)
    r_energy = float(np.dot(ref, ref))
    if r_energy == 0.0:
        raise ValueError("reference is all-zero")
    tau = 10 ** (-cap_db / 10)
    ref_t = Tensor(ref)
    if scale_invariant:
        alpha = (est * ref_t).sum() * (1.0 / r_energy)
        target = alpha * ref_t
    else:
        target = ref_t
    resid = est - target
    t_energy = (target * target).sum()
    r_sq = (resid * resid).sum()
    return (10.0 / LOG10) * (r_sq + tau * t_energy).log() - (10.0 / LOG10) * t_energy.log()


def _energy(t: Tensor) -> Tensor:
    return (t * t).sum()


def sep_loss(target_outputs: list[Tensor], selected: list[np.ndarray],
             cap_db: float = 25.0, inactivity_mu: float = 1e-3) -> Tensor:
    """Permutation-minimized separation loss.

    Minimum over injective assignments of the 2 selected pseudo-sources to
    2 of the M target outputs of the capped negative SI-SDR sum; outputs
    left unassigned contribute the energy penalty mu * |out|^2.
    """
    m = len(target_outputs)
    if m < 2:
        raise ValueError("need at least 2 target outputs")
    if len(selected) != 2:
        raise ValueError("exactly 2 selected pseudo-sources expected")
    pair_losses = {}
    for j, out in enumerate(target_outputs):
        for r, ref in enumerate(selected):
            pair_losses[(j, r)] = t_neg_snr_loss(out, ref, cap_db)
    energies = [_energy(out) for out in target_outputs]

    best = None
    best_val = np.inf
    for j1, j2 in permutations(range(m), 2):
        total = pair_losses[(j1, 0)] + pair_losses[(j2, 1)]
        for j in range(m):
            if j not in (j1, j2):
                total = total + inactivity_mu * energies[j]
        val = float(total.data)
        if val < best_val:
            best_val = val
            best = total
    return best


def denoise_loss(target_pairs: list[tuple[Tensor, Tensor]],
                 main_refs: list[tuple[np.ndarray, np.ndarray]],
                 cap_db: float = 25.0) -> Tensor:
    """Sum over items of capped negative SI-SDR between the target model's
    (speech, noise) estimates and the main model's shuffled references.
    Pairing is fixed by construction; no permutation search."""
    if len(target_pairs) != len(main_refs):
        raise ValueError("length mismatch between target outputs and references")
    total = None
    for (c_t, n_t), (c_ref, n_ref) in zip(target_pairs, main_refs):
        term = t_neg_snr_loss(c_t, c_ref, cap_db) + t_neg_snr_loss(n_t, n_ref, cap_db)
        total = term if total is None else total + term
    return total
