"""Per-trial signal generation and second-order statistics.

The received vector at the N-antenna fusion center for one channel use is

    y = A_tilde x + sum_k sqrt(nu_k) h_k x_k + w,

with x the K on/off sensor decisions, h_k ~ CN(0, I_N) fresh scattered
fading, and w ~ CN(0, sigma_w^2 I_N) thermal noise.  A jammer adds
A_J zeta(psi) plus its own scattered term.  Complex-normal convention
throughout: CN(0, s) has real and imaginary parts N(0, s/2).

All drawing functions are vectorized over a leading trial axis.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .scenario import JammerScenario, WsnScenario

H0 = 0
H1 = 1


def crandn(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circular complex normal CN(0, var) entries of the given shape."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def enumerate_decisions(k: int) -> np.ndarray:
    """All 2^k decision vectors, row j holding the bits of j (sensor k = bit k)."""
    if k > 16:
        raise ValueError(f"decision enumeration capped at K=16, got K={k}")
    j = np.arange(2 ** k, dtype=np.uint32)
    return ((j[:, None] >> np.arange(k)[None, :]) & 1).astype(np.int8)


def pmf_moments(pmf: np.ndarray, k: int):
    """Marginal transmit probabilities and decision covariance of a joint pmf.

    ``pmf`` is a length-2^k table over decision vectors in the
    enumerate_decisions() order.  Returns (rho, sigma_x).
    """
    pmf = np.asarray(pmf, dtype=float)
    if pmf.shape != (2 ** k,):
        raise ValueError(f"pmf must have shape ({2 ** k},), got {pmf.shape}")
    if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-9:
        raise ValueError("pmf entries must be nonnegative and sum to 1")
    x_all = enumerate_decisions(k).astype(float)
    rho = pmf @ x_all
    second = (x_all * pmf[:, None]).T @ x_all
    return rho, second - np.outer(rho, rho)


def draw_decisions(scenario: WsnScenario, h: int, rng: np.random.Generator,
                   size: int | None = None, pmf: np.ndarray | None = None) -> np.ndarray:
    """Draw local decisions under hypothesis ``h``.

    Default: independent Bernoulli with the per-sensor pd (h=1) or pf (h=0).
    A joint pmf table over all 2^K decision vectors may be supplied instead
    (K <= 16).  Returns int8 of shape (K,) or (size, K).
    """
    k = scenario.k_sensors
    t = 1 if size is None else int(size)
    if pmf is not None:
        pmf = np.asarray(pmf, dtype=float)
        pmf_moments(pmf, k)  # validates shape/normalization
        idx = rng.choice(2 ** k, size=t, p=pmf)
        x = enumerate_decisions(k)[idx]
    else:
        p = scenario.rho(h)
        x = (rng.random((t, k)) < p[None, :]).astype(np.int8)
    return x[0] if size is None else x


def draw_received(scenario: WsnScenario, x, rng: np.random.Generator) -> np.ndarray:
    """One channel use: LOS term plus per-sensor scattered fading plus noise.

    ``x`` has shape (K,) or (T, K); the result matches with N in place of K.
    Draw order (scattered fading first, then noise) is fixed so equal seeds
    give equal samples.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    t, k = xs.shape
    if k != scenario.k_sensors:
        raise ValueError(f"decision vector length {k} != K={scenario.k_sensors}")
    n = scenario.n_antennas
    los = xs @ scenario.a_tilde.T
    h_scat = crandn(rng, (t, n, k))
    scat = np.einsum("tnk,tk->tn", h_scat, xs * np.sqrt(scenario.nu)[None, :])
    w = crandn(rng, (t, n), var=scenario.noise_power)
    y = los + scat + w
    return y[0] if single else y


def draw_psi(jammer: JammerScenario, rng: np.random.Generator, size: int) -> np.ndarray:
    """Jammer symbols for ``size`` trials according to the signal policy."""
    r = jammer.rank
    if jammer.signal_policy == "uniform-phase":
        return np.exp(2j * np.pi * rng.random((size, r)))
    psi = jammer.psi_const if jammer.psi_const is not None else np.ones(r, dtype=complex)
    return np.broadcast_to(psi, (size, r)).copy()


def draw_jammed(scenario: WsnScenario, jammer: JammerScenario, x,
                rng: np.random.Generator):
    """Channel use with the jammer active; returns (y_s, psi).

    The interference-free part is drawn first (so with a common seed it
    matches draw_received exactly), then the jammer symbols psi, the jammer
    LOS contribution A_J zeta(psi) and its scattered fading are added.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    t = xs.shape[0]
    y = np.atleast_2d(draw_received(scenario, xs, rng))
    psi = draw_psi(jammer, rng, t)
    zeta = jammer.zeta(psi)
    h_j = crandn(rng, (t, scenario.n_antennas, jammer.rank))
    scat = np.einsum("tnr,tr->tn", h_j, psi * np.sqrt(jammer.nu)[None, :])
    y_s = y + zeta @ jammer.a_j.T + scat
    if single:
        return y_s[0], psi[0]
    return y_s, psi


def augment(a: np.ndarray) -> np.ndarray:
    """Stack a with its conjugate: vectors (...,N)->(...,2N), matrices rows-wise."""
    a = np.asarray(a)
    if a.ndim == 2 and a.shape[0] != 1:
        # matrix: stack row blocks [A; conj(A)] -- used for the channel matrix
        return np.vstack([a, a.conj()])
    return np.concatenate([a, a.conj()], axis=-1)


def augment_batch(y: np.ndarray) -> np.ndarray:
    """Augment a (T, N) batch of received vectors to (T, 2N)."""
    return np.concatenate([y, y.conj()], axis=-1)


@dataclass(frozen=True)
class SecondOrderChar:
    """Conditional mean/covariance of y under one hypothesis.

    ``cov`` is the (proper) covariance, ``pcov`` the pseudo-covariance
    E{(y-m)(y-m)^T}, and ``aug_cov`` the 2N x 2N covariance of the augmented
    vector [y; conj(y)] -- the received vector is improper whenever pcov is
    nonzero, which is the generic LOS case.
    """

    mean: np.ndarray
    cov: np.ndarray
    pcov: np.ndarray
    aug_cov: np.ndarray
    sigma_e2: float
    rho: np.ndarray


def second_order_char(scenario: WsnScenario, h: int,
                      sigma_x: np.ndarray | None = None,
                      rho: np.ndarray | None = None) -> SecondOrderChar:
    """Closed-form conditional second-order statistics of y under ``h``.

    By default decisions are conditionally independent, so the decision
    covariance is diag(rho_k (1 - rho_k)).  A caller-supplied ``sigma_x``
    (K x K, e.g. from pmf_moments for dependent decisions) overrides it,
    optionally together with the matching marginals ``rho``.
    """
    k = scenario.k_sensors
    rho = scenario.rho(h) if rho is None else np.asarray(rho, dtype=float)
    if rho.shape != (k,):
        raise ValueError(f"rho must have shape ({k},), got {rho.shape}")
    if sigma_x is None:
        sigma_x = np.diag(rho * (1.0 - rho))
    else:
        sigma_x = np.asarray(sigma_x, dtype=float)
        if sigma_x.shape != (k, k):
            raise ValueError(f"sigma_x must be ({k}, {k}), got {sigma_x.shape}")
    at = scenario.a_tilde
    sigma_e2 = float(scenario.nu @ rho + scenario.noise_power)
    mean = at @ rho
    n = scenario.n_antennas
    cov = at @ sigma_x @ at.conj().T + sigma_e2 * np.eye(n)
    pcov = at @ sigma_x @ at.T
    aug = np.block([[cov, pcov], [pcov.conj(), cov.conj()]])
    return SecondOrderChar(mean=mean, cov=cov, pcov=pcov, aug_cov=aug,
                           sigma_e2=sigma_e2, rho=rho)


def dump_samples(path, y: np.ndarray, x: np.ndarray, hypothesis: int) -> None:
    """Write drawn samples to CSV: trial, hypothesis, decision bits, Re/Im of y."""
    y = np.atleast_2d(np.asarray(y))
    x = np.atleast_2d(np.asarray(x))
    n = y.shape[1]
    header = (["trial", "hypothesis", "x"]
              + [f"re_y{i}" for i in range(n)] + [f"im_y{i}" for i in range(n)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(y.shape[0]):
            bits = "".join(str(int(b)) for b in x[t])
            row = [t, int(hypothesis), bits]
            row += [repr(float(v)) for v in y[t].real]
            row += [repr(float(v)) for v in y[t].imag]
            writer.writerow(row)
