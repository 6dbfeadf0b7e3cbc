"""Collision pair records and barrier weighting.

Two weighting modes exist. The life-span mode ("ndb") grows a pair's weight
exponentially with the number of consecutive iterations it has stayed active,
and needs only the boolean classifier to update. The distance mode ("dbb")
evaluates a log-barrier of the current pair distance and is kept as the
comparison baseline; it needs fresh distances (hence full narrow-phase work)
at every refresh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VT = 0
EE = 1

# life spans are capped so k * base**span stays finite
LIFE_SPAN_CAP = 64


@dataclass
class PairSet:
    """Batched collision pairs with their life spans and weights."""

    kind: np.ndarray                        # (m,) VT or EE
    idx: np.ndarray                         # (m,4) vertex ids
    life_span: np.ndarray                   # (m,) consecutive active iterations
    weight: np.ndarray                      # (m,)
    bary: np.ndarray = field(default=None)  # (m,2) closest-point witness
    distance: np.ndarray = field(default=None)  # (m,) witness distance
    normal: np.ndarray = field(default=None)    # (m,3) separating direction

    @classmethod
    def empty(cls) -> "PairSet":
        return cls(
            kind=np.zeros(0, dtype=np.int8),
            idx=np.zeros((0, 4), dtype=np.int64),
            life_span=np.zeros(0, dtype=np.int64),
            weight=np.zeros(0),
            bary=np.zeros((0, 2)),
            distance=np.zeros(0),
            normal=np.zeros((0, 3)),
        )

    def __len__(self) -> int:
        return len(self.kind)

    def keys(self) -> np.ndarray:
        """Canonical dedup/carry-over keys, one row per pair."""
        canon = self.idx.copy()
        vt = self.kind == VT
        canon[vt, 1:] = np.sort(canon[vt, 1:], axis=1)
        ee = self.kind == EE
        canon[ee, :2] = np.sort(canon[ee, :2], axis=1)
        canon[ee, 2:] = np.sort(canon[ee, 2:], axis=1)
        # edge pairs are unordered
        swap = ee & (canon[:, 0] > canon[:, 2])
        canon[swap] = canon[swap][:, [2, 3, 0, 1]]
        return np.concatenate([self.kind[:, None].astype(np.int64), canon], axis=1)


def ndb_weights(life_span: np.ndarray, k: float, base: float) -> np.ndarray:
    """Exponential life-span weight k * base**span, overflow-capped."""
    if k <= 0 or base <= 1:
        raise ValueError("need k > 0 and base > 1")
    span = np.minimum(life_span, LIFE_SPAN_CAP)
    return k * np.power(base, span.astype(np.float64))


def update_ndb_weights(pairs: PairSet, active: np.ndarray, k: float, base: float) -> PairSet:
    """Advance life spans by this iteration's activity and recompute weights.

    Active pairs age by one; inactive pairs reset to zero.
    """
    pairs.life_span = np.where(active, np.minimum(pairs.life_span + 1, LIFE_SPAN_CAP), 0)
    pairs.weight = ndb_weights(pairs.life_span, k, base)
    return pairs


def dbb_weight(d, d_hat: float, kappa: float):
    """Log-barrier of the pair distance: -kappa (d - d_hat)^2 ln(d / d_hat).

    Zero at and beyond d_hat, diverging as d -> 0+. Distances must be
    positive (the interior assumption).
    """
    if d_hat <= 0 or kappa <= 0:
        raise ValueError("need d_hat > 0 and kappa > 0")
    d = np.asarray(d, dtype=np.float64)
    if (d <= 0).any():
        raise FloatingPointError("nonpositive pair distance: infeasible state")
    out = np.zeros_like(d)
    near = d < d_hat
    dn = d[near]
    out[near] = -kappa * (dn - d_hat) ** 2 * np.log(dn / d_hat)
    return out if out.ndim else float(out)


def dbb_weight_gradient(d, d_hat: float, kappa: float):
    """d/dd of dbb_weight, zero at and beyond d_hat."""
    d = np.asarray(d, dtype=np.float64)
    out = np.zeros_like(d)
    near = (d > 0) & (d < d_hat)
    dn = d[near]
    out[near] = -kappa * (2.0 * (dn - d_hat) * np.log(dn / d_hat) + (dn - d_hat) ** 2 / dn)
    return out if out.ndim else float(out)
