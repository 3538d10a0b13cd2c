"""Slow, loop-based reference computations used as independent oracles.

Nothing here imports the vectorised engine.  Regimes are plain Python
callables ``rule(k, history) -> code`` and treatment probabilities are
callables ``prob(k, history, code) -> float``, so that the arithmetic can be
checked against the package without sharing its rule evaluator or weight
builder.
"""
from __future__ import annotations

from fractions import Fraction

import mpmath
import numpy as np


class Subj:
    """Minimal subject: decision times (first is 0), treatments, covariates."""

    def __init__(self, u, delta, treatments, times=(0.0,), cov=None):
        self.u = float(u)
        self.delta = int(delta)
        self.treatments = list(treatments)
        self.times = list(times)
        self.cov = dict(cov or {})

    @property
    def kappa(self):
        return len(self.treatments)

    def history(self):
        h = dict(self.cov)
        for k, a in enumerate(self.treatments, start=1):
            h[f"a{k}"] = a
        return h


def weight(s: Subj, rule, prob, u: float) -> float:
    if s.u < u:
        return 0.0
    h = s.history()
    w = 1.0
    for k in range(1, s.kappa + 1):
        if s.times[k - 1] <= u:
            code = rule(k, h)
            if s.treatments[k - 1] != code:
                return 0.0
            w /= prob(k, h, code)
    return w


def event_times(subjects, L):
    return sorted({s.u for s in subjects if s.delta == 1 and s.u <= L})


def reference_test(subjects, rules, prob, L, corrected=False):
    """Return dict with dLambda, qhat, score, iid, G, sigma, stat (loops only)."""
    grid = event_times(subjects, L)
    n, D, G = len(subjects), len(rules), len(grid)
    W = [[[weight(s, r, prob, u) for u in grid] for s in subjects] for r in rules]
    dN = [[1.0 if (s.delta == 1 and s.u == u) else 0.0 for u in grid] for s in subjects]
    Y = [[1.0 if s.u >= u else 0.0 for u in grid] for s in subjects]
    dLam, q = [], [[0.0] * G for _ in range(D)]
    for g in range(G):
        num = sum(W[j][i][g] * dN[i][g] for j in range(D) for i in range(n))
        den = sum(W[j][i][g] * Y[i][g] for j in range(D) for i in range(n))
        dLam.append(num / den if den > 0 else 0.0)
        for j in range(D):
            qj = sum(W[j][i][g] * Y[i][g] for i in range(n))
            q[j][g] = qj / den if den > 0 else 0.0
    dM = [[dN[i][g] - dLam[g] * Y[i][g] for g in range(G)] for i in range(n)]
    score = [sum(W[j][i][g] * dM[i][g] for i in range(n) for g in range(G)) for j in range(D - 1)]
    iid = np.zeros((n, D - 1))
    Gt = np.zeros((n, D - 1))
    for i in range(n):
        for j in range(D - 1):
            for g in range(G):
                tot = sum(W[jj][i][g] for jj in range(D))
                A = W[j][i][g] - q[j][g] * tot
                iid[i, j] += A * dM[i][g]
                mean_tot = sum(W[jj][l][g] for jj in range(D) for l in range(n)) / n
                if mean_tot > 0:
                    Gt[i, j] += A * tot * dM[i][g] / mean_tot
    sigma = iid.T @ iid / n
    if corrected:
        sigma = sigma + (2 * iid.T @ Gt + 2 * Gt.T @ iid) / n ** 2
    Sp = np.linalg.pinv(sigma, rcond=1e-8)          # SVD route, not the eigh route
    T = np.array(score)
    stat = float(T @ Sp @ T) / n
    return {"grid": grid, "dLambda": dLam, "qhat": q, "score": T, "iid": iid, "G": Gt,
            "sigma": sigma, "stat": stat}


def classical_logrank_numerator(times, events, arm):
    """Observed minus expected events in arm 1, as an exact Fraction."""
    total = Fraction(0)
    for u in sorted({t for t, e in zip(times, events) if e}):
        at_risk = [i for i, t in enumerate(times) if t >= u]
        n_u = len(at_risk)
        n1 = sum(1 for i in at_risk if arm[i] == 1)
        d = sum(1 for i, t in enumerate(times) if t == u and events[i])
        d1 = sum(1 for i, t in enumerate(times) if t == u and events[i] and arm[i] == 1)
        total += Fraction(d1) - Fraction(d * n1, n_u)
    return total


def nelson_aalen_increments(times, events):
    out = []
    for u in sorted({t for t, e in zip(times, events) if e}):
        d = sum(1 for t, e in zip(times, events) if e and t == u)
        r = sum(1 for t in times if t >= u)
        out.append(Fraction(d, r))
    return out


def chi2_sf_mp(x, nu):
    """Upper chi-square tail through mpmath's regularised incomplete gamma."""
    return float(mpmath.gammainc(mpmath.mpf(nu) / 2, mpmath.mpf(x) / 2, mpmath.inf,
                                 regularized=True))
