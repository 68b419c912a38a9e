"""PMBM-to-PMB reduction: track table, marginal associations, recombination.

After the update every global hypothesis is expressed over a common track
index set (prior landmarks followed by one slot per measurement).  The
per-track, per-association conditional Bernoullis are averaged over the
hypotheses sharing that association, weighted by hypothesis weight, and
the track-oriented recombination collapses the mixture to a single
multi-Bernoulli using the marginal association probabilities.

Cells with exactly one contributing hypothesis are copied verbatim, which
keeps the single-hypothesis reduction an exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .density import (
    Bernoulli,
    GlobalHypothesis,
    LandmarkBelief,
    PmbmDensity,
    TypeComponent,
    symmetrize,
)
from .geometry import TYPE_ORDER

#: Cells with less marginal probability than this carry no posterior mass.
MIN_CELL_MASS = 1e-12


class InconsistentHypothesesError(ValueError):
    """Hypotheses do not share a common parent multi-Bernoulli structure."""


@dataclass
class TrackCell:
    """One (track, local association) cell of the track table."""

    beta: float = 0.0
    beta_by_type: dict = field(default_factory=dict)
    contributors: list = field(default_factory=list)  # (weight, Bernoulli)
    bernoulli: Optional[Bernoulli] = None             # set by averaging


@dataclass
class TrackTable:
    """Marginal association table over tracks.

    Prior tracks are 0..n_prior-1 with local associations q in
    {0 (misdetected), 1..n_meas}; new tracks n_prior..n_prior+n_meas-1 have
    q in {their own measurement, None (not born)}.
    """

    n_prior: int
    n_meas: int
    cells: dict  # (track, q) -> TrackCell

    @property
    def n_tracks(self) -> int:
        return self.n_prior + self.n_meas

    def track_cells(self, t: int):
        return {q: cell for (tt, q), cell in self.cells.items() if tt == t}

    def beta_row_sums(self):
        return [sum(c.beta for c in self.track_cells(t).values())
                for t in range(self.n_tracks)]


def align_hypotheses(density: PmbmDensity) -> TrackTable:
    """Express all hypotheses over the common track set and collect betas."""
    if not density.hypotheses:
        raise InconsistentHypothesesError("no hypotheses to align")
    first = density.hypotheses[0].assoc
    if first is None:
        raise InconsistentHypothesesError("hypotheses carry no association info")
    n_prior, n_meas = first.n_prior, first.n_meas
    cells: dict = {}
    for hyp in density.hypotheses:
        sigma = hyp.assoc
        if sigma is None or sigma.n_prior != n_prior or sigma.n_meas != n_meas:
            raise InconsistentHypothesesError(
                "hypotheses disagree on the parent track structure")
        expected = n_prior + len(sigma.born_measurements())
        if len(hyp.bernoullis) != expected:
            raise InconsistentHypothesesError(
                "hypothesis Bernoulli count inconsistent with its association")
        w = hyp.weight
        for t in range(n_prior):
            q = sigma.sigma[t]
            cell = cells.setdefault((t, q), TrackCell())
            bern = hyp.bernoullis[t]
            cell.beta += w
            cell.contributors.append((w, bern))
            for kind, comp in bern.belief.types.items():
                cell.beta_by_type[kind] = (cell.beta_by_type.get(kind, 0.0)
                                           + w * comp.weight)
        born_rank = 0
        for t in range(n_prior, n_prior + n_meas):
            entry = sigma.sigma[t]
            if entry is None:
                cell = cells.setdefault((t, None), TrackCell())
                cell.beta += w  # not-born slots carry zero existence
                continue
            bern = hyp.bernoullis[n_prior + born_rank]
            born_rank += 1
            cell = cells.setdefault((t, entry), TrackCell())
            cell.beta += w
            cell.contributors.append((w, bern))
            for kind, comp in bern.belief.types.items():
                cell.beta_by_type[kind] = (cell.beta_by_type.get(kind, 0.0)
                                           + w * comp.weight)
    return TrackTable(n_prior, n_meas, cells)


def _average_cell(cell: TrackCell) -> Bernoulli:
    if len(cell.contributors) == 1:
        return cell.contributors[0][1]
    beta = cell.beta
    existence = sum(w * b.existence for w, b in cell.contributors) / beta
    types = {}
    for kind in TYPE_ORDER:
        members = [(w, b.belief.types[kind]) for w, b in cell.contributors
                   if kind in b.belief.types]
        if not members:
            continue
        norm = sum(w * c.weight for w, c in members)
        psi = norm / beta
        if norm < MIN_CELL_MASS:
            comp = members[0][1]
            types[kind] = TypeComponent(psi, comp.mean, comp.covariance)
            continue
        mean = sum(w * c.weight * c.mean for w, c in members) / norm
        cov = sum(w * c.weight
                  * (c.covariance + np.outer(c.mean - mean, c.mean - mean))
                  for w, c in members) / norm
        types[kind] = TypeComponent(psi, mean, symmetrize(cov))
    return Bernoulli(existence, LandmarkBelief(types))


def average_conditionals(table: TrackTable, density: PmbmDensity) -> TrackTable:
    """Average the per-cell conditional Bernoullis over contributing hypotheses."""
    for (t, q), cell in table.cells.items():
        if q is None or not cell.contributors or cell.beta < MIN_CELL_MASS:
            continue
        cell.bernoulli = _average_cell(cell)
    return table


def _uniform_belief(template: LandmarkBelief) -> LandmarkBelief:
    kinds = list(template.types)
    return LandmarkBelief({
        k: TypeComponent(1.0 / len(kinds), c.mean, c.covariance)
        for k, c in template.types.items()})


def _recombine_prior_track(cells: dict) -> Bernoulli:
    live = {q: c for q, c in cells.items()
            if c.bernoulli is not None and c.beta >= MIN_CELL_MASS}
    if not live:
        raise InconsistentHypothesesError("prior track with no live cells")
    if len(live) == len(cells) == 1:
        # Every hypothesis agrees on this track's association, so its
        # marginal probability is one by the row-sum invariant; copy the
        # averaged Bernoulli verbatim instead of multiplying it by a
        # floating-point rendering of one.
        (_, cell), = live.items()
        return cell.bernoulli
    existence = sum(c.beta * c.bernoulli.existence for c in live.values())
    types = {}
    for kind in TYPE_ORDER:
        members = [(c.beta_by_type.get(kind, 0.0), c.bernoulli)
                   for c in live.values()
                   if kind in c.bernoulli.belief.types]
        if not members:
            continue
        norm = sum(bt * b.existence for bt, b in members)
        psi = norm / existence if existence > 0.0 else 1.0 / len(TYPE_ORDER)
        if norm < MIN_CELL_MASS:
            comp = members[0][1].belief.types[kind]
            types[kind] = TypeComponent(psi, comp.mean, comp.covariance)
            continue
        comps = [(bt * b.existence, b.belief.types[kind]) for bt, b in members]
        mean = sum(w * c.mean for w, c in comps) / norm
        cov = sum(w * (c.covariance + np.outer(c.mean - mean, c.mean - mean))
                  for w, c in comps) / norm
        types[kind] = TypeComponent(psi, mean, symmetrize(cov))
    if existence <= 0.0:
        belief = _uniform_belief(live[next(iter(live))].bernoulli.belief)
        return Bernoulli(0.0, belief)
    return Bernoulli(min(1.0, existence), LandmarkBelief(types))


def _recombine_new_track(cells: dict) -> Bernoulli:
    born = [(q, c) for q, c in cells.items()
            if q is not None and c.bernoulli is not None]
    if not born:
        # Never born in any hypothesis: zero-existence placeholder.
        return Bernoulli(0.0, LandmarkBelief({
            TYPE_ORDER[1]: TypeComponent(1.0, np.zeros(3), 1e6 * np.eye(3))}))
    (q, cell), = born
    bern = cell.bernoulli
    if len(cells) == 1:
        # Born in every hypothesis: marginal probability is one exactly.
        return bern
    existence = cell.beta * bern.existence
    if bern.existence <= 0.0:
        return Bernoulli(0.0, bern.belief)
    types = {k: TypeComponent(cell.beta_by_type.get(k, 0.0) / cell.beta,
                              c.mean, c.covariance)
             for k, c in bern.belief.types.items()}
    return Bernoulli(existence, LandmarkBelief(types))


def tomb_recombine(table: TrackTable) -> GlobalHypothesis:
    """Collapse the track table to a single multi-Bernoulli hypothesis."""
    berns = []
    for t in range(table.n_prior):
        berns.append(_recombine_prior_track(table.track_cells(t)))
    for t in range(table.n_prior, table.n_tracks):
        berns.append(_recombine_new_track(table.track_cells(t)))
    return GlobalHypothesis(1.0, tuple(berns), assoc=None)
