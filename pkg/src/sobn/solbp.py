"""Second-order loopy belief propagation.

Each message carries a mean and a covariance. Means follow the first-order
equations evaluated at the input means; covariances are propagated with the
delta method, summing J sigma J^T over the statistically independent inputs
of every update (table rows, incoming messages, internal values).

Jacobians that are usually written as ratios of message means (e.g.
d pi_out(y) / d lambda_j(y) = pi_out(y) / lambda_j(y)) are evaluated here in
their product form, which stays finite when a divisor mean is zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import bp
from .bp import ConvergenceReport, LoopyPropagation
from .model import (
    Evidence,
    MarginalEstimate,
    MessageStats,
    RowMoments,
    UncertainNetwork,
    moments_of,
)


def _sym(cov):
    return 0.5 * (cov + cov.T)


def _products_excluding(means: Sequence[np.ndarray], cardinality: int) -> list[np.ndarray]:
    """For each j, the elementwise product of all means except the j-th."""
    out = []
    for j in range(len(means)):
        acc = np.ones(cardinality)
        for k, m in enumerate(means):
            if k != j:
                acc = acc * m
        out.append(acc)
    return out


def pi_jacobians(table: np.ndarray, parent_means: Sequence[np.ndarray], parent_cards: Sequence[int]) -> list[np.ndarray]:
    """d internal_pi(y) / d pi_i(x_i) for every parent i, each shaped (card, card_i)."""
    parent_cards = tuple(parent_cards)
    selectors = bp.parent_selectors(parent_cards)
    out = []
    for i in range(len(parent_cards)):
        w = bp.parent_weights(parent_means, parent_cards, skip=(i,))
        out.append(table.T @ (w[:, None] * selectors[i].T))
    return out


def so_internal_pi(
    moments: RowMoments, incoming: Sequence[MessageStats], parent_cards: Sequence[int] = ()
) -> MessageStats:
    """Internal pi value with covariance from the table rows and parent messages."""
    means = [m.mean for m in incoming]
    mean = bp.internal_pi(moments.means, means, parent_cards)
    card = mean.size
    # rows: J_theta = (prod of parent message means) * I
    w = bp.parent_weights(means, parent_cards)
    cov = ((w * w) @ moments.covs.reshape(len(w), -1)).reshape(card, card)
    for jac, msg in zip(pi_jacobians(moments.means, means, parent_cards), incoming):
        cov = cov + jac @ msg.cov @ jac.T
    return MessageStats(mean, _sym(cov))


def so_internal_lambda(incoming: Sequence[MessageStats], cardinality: int) -> MessageStats:
    """Elementwise product of lambda-messages; Jacobians are diagonal."""
    means = [m.mean for m in incoming]
    mean = bp.internal_lambda(means, cardinality)
    cov = np.zeros((cardinality, cardinality))
    for d, msg in zip(_products_excluding(means, cardinality), incoming):
        cov = cov + d[:, None] * msg.cov * d[None, :]
    return MessageStats(mean, _sym(cov))


def so_pi_message(internal: MessageStats, others: Sequence[MessageStats], normalize: bool = True) -> MessageStats:
    """Pi-message to a child given the lambda-messages of the other children.

    With ``normalize`` the message is scaled to sum to one and its
    covariance is carried through the normalization map m -> m / sum(m).
    """
    lam_means = [m.mean for m in others]
    mean = bp.pi_message(internal.mean, lam_means)
    card = mean.size
    factors = _products_excluding([internal.mean] + lam_means, card)
    cov = factors[0][:, None] * internal.cov * factors[0][None, :]
    for d, msg in zip(factors[1:], others):
        cov = cov + d[:, None] * msg.cov * d[None, :]
    if normalize:
        total = mean.sum()
        if total > 0:
            mean = mean / total
            jac = (np.eye(card) - mean[:, None]) / total
            cov = jac @ cov @ jac.T
    return MessageStats(mean, _sym(cov))


def lambda_jacobians(
    internal: np.ndarray,
    table: np.ndarray,
    parent_means: Sequence[np.ndarray | None],
    position: int,
    parent_cards: Sequence[int],
):
    """Jacobians of the lambda-message to parent ``position``.

    Returns ``(J_lambda, J_pi)`` where ``J_lambda`` is (card_i, card_y) and
    ``J_pi`` maps each other parent index j to its (card_i, card_j) Jacobian.
    """
    parent_cards = tuple(parent_cards)
    sel = bp.parent_selectors(parent_cards)[position]
    w = bp.parent_weights(parent_means, parent_cards, skip=(position,))
    j_lambda = sel @ (w[:, None] * table)
    weighted = table @ internal
    j_pi = {}
    for j in range(len(parent_cards)):
        if j != position:
            wj = bp.parent_weights(parent_means, parent_cards, skip=(position, j))
            terms = (weighted * wj).reshape(parent_cards)
            summed = terms.sum(axis=tuple(a for a in range(len(parent_cards)) if a not in (position, j)))
            j_pi[j] = summed if position < j else summed.T
    return j_lambda, j_pi


def so_lambda_message(
    moments: RowMoments,
    internal: MessageStats,
    incoming: Sequence[MessageStats | None],
    position: int,
    parent_cards: Sequence[int],
    rescale: bool = True,
) -> MessageStats:
    """Lambda-message to the parent at ``position`` with delta-method covariance.

    ``incoming`` holds the pi-messages from all parents; the entry at
    ``position`` is ignored. With ``rescale`` the result is scaled so its
    largest mean entry is one and the covariance by the square of the factor.
    """
    parent_cards = tuple(parent_cards)
    means = [None if j == position or m is None else m.mean for j, m in enumerate(incoming)]
    table = moments.means
    lam = internal.mean
    mean = bp.lambda_message(lam, table, means, position, parent_cards)
    j_lambda, j_pi = lambda_jacobians(lam, table, means, position, parent_cards)
    # row r only moves entry x_i(r), with gradient lambda * prod_{j != i} pi_j(x_j)
    w = bp.parent_weights(means, parent_cards, skip=(position,))
    quad = moments.covs.reshape(len(w), -1) @ np.multiply.outer(lam, lam).reshape(-1)
    cov = np.diag(bp.parent_selectors(parent_cards)[position] @ (w * w * quad))
    for j, jac in j_pi.items():
        cov = cov + jac @ incoming[j].cov @ jac.T
    cov = cov + j_lambda @ internal.cov @ j_lambda.T
    if rescale:
        top = mean.max()
        if top > 0:
            mean = mean / top
            cov = cov / top**2
    return MessageStats(mean, _sym(cov))


def belief_jacobians(pi_mean: np.ndarray, lambda_mean: np.ndarray):
    """Jacobians of the normalized belief w.r.t. internal lambda and pi."""
    p = bp.belief(pi_mean, lambda_mean)
    total = float((pi_mean * lambda_mean).sum())
    centered = np.eye(p.size) - p[:, None]  # (delta_{y y'} - p(y))
    return p, centered * pi_mean[None, :] / total, centered * lambda_mean[None, :] / total


def so_belief(variable: int, internal_pi: MessageStats, internal_lambda: MessageStats) -> MarginalEstimate:
    p, j_lambda, j_pi = belief_jacobians(internal_pi.mean, internal_lambda.mean)
    cov = j_lambda @ internal_lambda.cov @ j_lambda.T + j_pi @ internal_pi.cov @ j_pi.T
    return MarginalEstimate(variable, p, _sym(cov))


class SecondOrderPropagation(LoopyPropagation):
    """Loopy propagation of message means and covariances."""

    def _initial(self, mean):
        return MessageStats.constant(mean)

    def _mean(self, message):
        return message.mean

    def _compute_internal_pi(self, node, parent_messages):
        return so_internal_pi(self.moments[node], parent_messages, self.parent_cards[node])

    def _compute_internal_lambda(self, node, child_messages):
        return so_internal_lambda(child_messages, self.structure.variables[node].cardinality)

    def _compute_pi_message(self, internal, other_lambda):
        return so_pi_message(internal, other_lambda)

    def _compute_lambda_message(self, node, internal, parent_messages, position):
        return so_lambda_message(
            self.moments[node], internal, parent_messages, position, self.parent_cards[node]
        )

    def marginals(self) -> list[MarginalEstimate]:
        return [
            so_belief(i, p, l) for i, (p, l) in enumerate(zip(self.internal_pi, self.internal_lambda))
        ]


@dataclass(frozen=True)
class SolbpResult:
    marginals: list[MarginalEstimate]
    report: ConvergenceReport


def run_solbp(
    uncertain: UncertainNetwork,
    evidence: Evidence,
    epsilon: float = 1e-8,
    max_rounds: int = 200,
    rng: np.random.Generator | None = None,
    moments: Sequence[RowMoments] | None = None,
) -> SolbpResult:
    """Posterior means and covariances of p(Y | e) for every variable.

    ``moments`` overrides the Dirichlet row moments of ``uncertain`` (used to
    study the zero-uncertainty limit).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    moments = moments_of(uncertain) if moments is None else moments
    engine = SecondOrderPropagation(uncertain.structure, moments, evidence)
    report = engine.run(epsilon, max_rounds, rng)
    return SolbpResult(engine.marginals(), report)
