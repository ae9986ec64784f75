"""Joint GMM for the two-stage estimators.

Stacking the first-stage normal equations on top of the second-stage ones
gives a just-identified, linear moment system

    f_i = [ w_i 1(first_i) (y_i - F_i lam - E_i delta) [F_i, E_i]' ]
          [ w_i            (y_i - F_i lam - X_i beta)   X_i'       ]

whose solution reproduces the sequential estimates and whose sandwich
covariance accounts for the estimated fixed effects in the second-stage
outcome. Cluster sums of ``f_i`` form the middle matrix, scaled by G/(G-1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._design import EventStudySpec, TwoStageDesign, two_stage_design
from .errors import SingularSystem, TooFewClusters, Unidentified
from .panel import Panel
from .regression import Vcov, cluster_sums

__all__ = ["MomentSystem", "GmmResult", "build_moment_system", "solve_gmm", "sandwich_vcov"]

_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class MomentSystem:
    """Linear two-block moment system.

    ``F`` holds the fixed-effect dummies shared by both blocks, ``E`` any
    extra first-stage regressors, ``X`` the second-stage regressors (zero
    outside the second-stage sample) and ``first`` flags first-stage rows.
    """

    y: np.ndarray
    weights: np.ndarray
    F: np.ndarray
    E: np.ndarray
    first: np.ndarray
    X: np.ndarray
    clusters: np.ndarray
    fe_labels: list
    extra_labels: list
    beta_labels: list

    @classmethod
    def from_design(cls, d: TwoStageDesign, clusters) -> "MomentSystem":
        return cls(
            y=d.y,
            weights=d.weights,
            F=d.F,
            E=d.E,
            first=d.first_rows,
            X=d.X * d.second_rows[:, None],
            clusters=np.asarray(clusters),
            fe_labels=list(d.F_labels),
            extra_labels=list(d.E_labels),
            beta_labels=list(d.X_labels),
        )

    @property
    def labels(self) -> list:
        return self.fe_labels + self.extra_labels + self.beta_labels

    @property
    def k_first(self) -> int:
        return self.F.shape[1] + self.E.shape[1]

    @property
    def n_params(self) -> int:
        return self.k_first + self.X.shape[1]

    @property
    def n_moments(self) -> int:
        return self.n_params

    def _z1(self) -> np.ndarray:
        return np.hstack([self.F, self.E])

    def split(self, theta):
        kF, kE = self.F.shape[1], self.E.shape[1]
        return theta[:kF], theta[kF : kF + kE], theta[kF + kE :]

    def moments(self, theta) -> np.ndarray:
        """Per-observation moments, shape (N, k)."""
        lam, delta, beta = self.split(np.asarray(theta, dtype=float))
        u1 = self.y - self.F @ lam - self.E @ delta
        u2 = self.y - self.F @ lam - self.X @ beta
        f1 = self._z1() * (self.weights * self.first * u1)[:, None]
        f2 = self.X * (self.weights * u2)[:, None]
        return np.hstack([f1, f2])

    def jacobian(self) -> np.ndarray:
        """Mean derivative of the moments; constant because the system is linear."""
        return self._jacobian_sum() / self.y.shape[0]

    def _blocks(self):
        Z1 = self._z1()
        w1 = self.weights * self.first
        A = Z1.T @ (Z1 * w1[:, None])
        B = self.X.T @ (self.F * self.weights[:, None])
        C = self.X.T @ (self.X * self.weights[:, None])
        return A, B, C

    def _jacobian_sum(self) -> np.ndarray:
        A, B, C = self._blocks()
        k1, kb = self.k_first, self.X.shape[1]
        J = np.zeros((k1 + kb, k1 + kb))
        J[:k1, :k1] = -A
        J[k1:, : self.F.shape[1]] = -B
        J[k1:, k1:] = -C
        return J


@dataclass(frozen=True, eq=False)
class GmmResult:
    theta: np.ndarray
    labels: list
    beta_labels: list
    vcov: Vcov | None = None
    objective: float = 0.0

    @property
    def beta(self) -> np.ndarray:
        return self.theta[len(self.labels) - len(self.beta_labels) :]

    @property
    def beta_se(self) -> np.ndarray:
        if self.vcov is None:
            raise ValueError("call sandwich_vcov first")
        return self.vcov.subset(self.beta_labels).se


def build_moment_system(
    panel: Panel,
    variant: str = "two_stage_did",
    first_stage: str = "untreated_only",
    fe: str = "unit",
    estimand=None,
    es_spec: EventStudySpec | None = None,
    clusters=None,
) -> MomentSystem:
    """Moment system of a two-stage estimator on ``panel``.

    ``variant`` is ``"two_stage_did"`` or ``"two_stage_event_study"``.

    Raises
    ------
    Unidentified
        A parameter has no information (e.g. no treated observations for
        the treatment effect, or a unit without untreated observations).
    """
    v = {"two_stage_did": "did", "did": "did", "two_stage_event_study": "event_study", "event_study": "event_study"}
    if variant not in v:
        raise ValueError(f"unknown variant {variant!r}")
    d = two_stage_design(panel, v[variant], first_stage, fe, estimand, es_spec)
    system = MomentSystem.from_design(d, panel.cluster if clusters is None else clusters)
    _check_identified(system)
    return system


def _check_identified(system: MomentSystem) -> None:
    A, _, C = system._blocks()
    dead_c = np.nonzero(np.diag(C) <= 0)[0]
    if dead_c.size:
        names = [system.beta_labels[i] for i in dead_c]
        raise Unidentified(f"no observations inform {', '.join(names)}", parameters=names)
    for M, labels in ((A, system.fe_labels + system.extra_labels), (C, system.beta_labels)):
        if M.size == 0:
            continue
        s, V = np.linalg.eigh(M)
        small = s <= _TOL * max(s.max(), 1.0)
        if small.any():
            involved = np.nonzero(np.any(np.abs(V[:, small]) > 1e-8, axis=1))[0]
            names = [labels[i] for i in involved]
            raise Unidentified(f"singular moment Jacobian; unidentified: {', '.join(names[:10])}", parameters=names)


def solve_gmm(system: MomentSystem) -> GmmResult:
    """Set the sample mean moments to zero (block-triangular linear solve)."""
    A, B, C = system._blocks()
    Z1 = system._z1()
    w = system.weights
    try:
        if system.k_first:
            b1 = Z1.T @ (w * system.first * system.y)
            theta1 = np.linalg.solve(A, b1)
        else:
            theta1 = np.zeros(0)
        lam = theta1[: system.F.shape[1]]
        b2 = system.X.T @ (w * (system.y - system.F @ lam))
        beta = np.linalg.solve(C, b2)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    theta = np.concatenate([theta1, beta])
    gbar = system.moments(theta).mean(axis=0)
    return GmmResult(
        theta=theta,
        labels=system.labels,
        beta_labels=list(system.beta_labels),
        objective=float(gbar @ gbar),
    )


def sandwich_vcov(system: MomentSystem, result: GmmResult, block: bool = True) -> GmmResult:
    """Clustered sandwich ``J^{-1} (sum_c f_c f_c') J^{-1}'`` scaled by G/(G-1).

    With ``block=True`` only the treatment-effect block is formed, eliminating
    the fixed-effect block with a solve against the first-stage Gram matrix
    rather than inverting the full Jacobian. ``block=False`` returns the full
    covariance of every parameter.
    """
    keep = system.weights > 0
    G = int(np.unique(system.clusters[keep]).size)
    if G < 2:
        raise TooFewClusters(f"need at least 2 clusters, found {G}")
    adj = G / (G - 1)
    f = system.moments(result.theta)
    S = cluster_sums(f[keep], system.clusters[keep])
    k1 = system.k_first
    if block:
        A, B, C = system._blocks()
        S1, S2 = S[:, :k1], S[:, k1:]
        if k1:
            Bfull = np.hstack([B, np.zeros((B.shape[0], system.E.shape[1]))])
            M = np.linalg.solve(A, Bfull.T)  # A^{-1} B'
            psi = np.linalg.solve(C, (S2 - S1 @ M).T).T
        else:
            psi = np.linalg.solve(C, S2.T).T
        V = adj * psi.T @ psi
        labels = list(system.beta_labels)
    else:
        Jinv = np.linalg.inv(system._jacobian_sum())
        psi = S @ Jinv.T
        V = adj * psi.T @ psi
        labels = system.labels
    V = 0.5 * (V + V.T)
    vc = Vcov(V, labels, n_clusters=G, adjustment=adj)
    return GmmResult(result.theta, result.labels, result.beta_labels, vc, result.objective)
