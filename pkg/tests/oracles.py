"""Independent reference implementations used as test oracles.

These are deliberately naive: short, obviously-correct and slow.  None of
them shares code with the package under test.
"""
from __future__ import annotations

import itertools
from fractions import Fraction


# -- race step ------------------------------------------------------------------

def naive_step(dist, vel, base, early, late, finished, eps, length,
               block_gap, block_slow, hurry_gap, hurry_boost):
    """One synchronous tick on plain lists; returns new (dist, vel, finished)."""
    n = len(dist)
    new_d, new_v, new_f = list(dist), list(vel), list(finished)
    for i in range(n):
        if finished[i]:
            continue
        rho = min(dist[i] / length, 1.0)
        v = base[i] * (early[i] * (1 - rho) + late[i] * rho) * (1 + eps[i])
        others = [j for j in range(n) if j != i and not finished[j]]
        ahead = sorted((dist[j] - dist[i], j) for j in others if dist[j] > dist[i])
        behind = [dist[i] - dist[j] for j in others if dist[j] < dist[i]]
        if ahead and ahead[0][0] <= block_gap:
            v = min(v, block_slow * vel[ahead[0][1]])
        elif behind and min(behind) <= hurry_gap:
            v = v * hurry_boost
        new_v[i] = v
        new_d[i] = dist[i] + v
        new_f[i] = new_d[i] >= length
    return new_d, new_v, new_f


# -- exchange ----------------------------------------------------------------------

class NaiveBook:
    """A flat list of resting orders; every match rescans the whole list."""

    def __init__(self, price_improvement: bool = True):
        self.resting = []  # dicts: id, bettor, comp, side, odds, left, time
        self.price_improvement = price_improvement

    def submit(self, oid, bettor, comp, side, odds, stake, time):
        fills = []
        left = stake
        while left > 0:
            opp = "lay" if side == "back" else "back"
            cands = [r for r in self.resting if r["comp"] == comp and r["side"] == opp and r["left"] > 0]
            if side == "back":
                cands = [r for r in cands if (r["odds"] >= odds if self.price_improvement else r["odds"] == odds)]
                key = lambda r: (-r["odds"], r["time"], r["id"])
            else:
                cands = [r for r in cands if (r["odds"] <= odds if self.price_improvement else r["odds"] == odds)]
                key = lambda r: (r["odds"], r["time"], r["id"])
            if not cands:
                break
            r = min(cands, key=key)
            q = min(left, r["left"])
            r["left"] -= q
            left -= q
            back, lay = (oid, r["id"]) if side == "back" else (r["id"], oid)
            fills.append((back, lay, r["odds"], q))
        self.resting = [r for r in self.resting if r["left"] > 0]
        if left > 0:
            self.resting.append({"id": oid, "bettor": bettor, "comp": comp, "side": side,
                                 "odds": odds, "left": left, "time": time})
        return fills

    def cancel(self, oid):
        for r in self.resting:
            if r["id"] == oid:
                self.resting.remove(r)
                return r["left"]
        return 0


def naive_settle(fills, winner, rate):
    """fills: (back_bettor, lay_bettor, comp, odds_pips, stake_cents).  Exact rational arithmetic."""
    gross = {}
    for b, l, c, odds, stake in fills:
        if c == winner:
            amt = Fraction(stake * (odds - 100), 100)
            amt = round(amt)
        else:
            amt = -stake
        gross[b] = gross.get(b, 0) + amt
        gross[l] = gross.get(l, 0) - amt
    fees = {k: (round(Fraction(rate) * v) if v > 0 else 0) for k, v in gross.items()}
    return gross, fees


# -- tree splits --------------------------------------------------------------------

def brute_force_split(X, g, h, rows, lam, gamma, min_child_weight, features=None):
    """Try every (feature, midpoint) pair by explicit partitioning.

    Returns (feature, threshold, gain) or None, ties to lower feature then
    lower threshold, and only strictly positive gains.
    """
    G = sum(g[r] for r in rows)
    H = sum(h[r] for r in rows)
    best = None
    feats = range(len(X[0])) if features is None else sorted(features)
    for f in feats:
        values = sorted({X[r][f] for r in rows})
        for lo, hi in zip(values, values[1:]):
            thr = (lo + hi) / 2
            if not lo < thr <= hi:
                thr = hi
            left = [r for r in rows if X[r][f] < thr]
            right = [r for r in rows if X[r][f] >= thr]
            GL, HL = sum(g[r] for r in left), sum(h[r] for r in left)
            GR, HR = sum(g[r] for r in right), sum(h[r] for r in right)
            if HL < min_child_weight or HR < min_child_weight:
                continue
            gain = 0.5 * (GL ** 2 / (HL + lam) + GR ** 2 / (HR + lam) - G ** 2 / (H + lam)) - gamma
            if gain <= 0:
                continue
            if best is None or gain > best[2] + 1e-12 * max(1.0, abs(best[2])):
                best = (f, thr, gain)
    return best


# -- rank-sum test -----------------------------------------------------------------

def enumerate_u_sf(x, y):
    """P(U >= observed) by listing every way to give the x-labels to n of the pooled ranks."""
    n, m = len(x), len(y)
    u_obs = sum(1 for a in x for b in y if a > b) + 0.5 * sum(1 for a in x for b in y if a == b)
    N = n + m
    hits = total = 0
    for xs in itertools.combinations(range(N), n):
        s = set(xs)
        u = sum(1 for i in xs for j in range(N) if j not in s and j < i)
        hits += u >= u_obs - 1e-9
        total += 1
    return hits / total



def enumerate_u_distribution(n, m):
    """Null counts of U for tie-free samples of sizes n and m, by listing every labelling."""
    N = n + m
    counts = [0] * (n * m + 1)
    for xs in itertools.combinations(range(N), n):
        s = set(xs)
        counts[sum(1 for i in xs for j in range(N) if j not in s and j < i)] += 1
    return counts
