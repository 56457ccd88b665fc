"""Reference implementations written without the package's own helpers.

Matching is checked against Kuhn's augmenting-path algorithm on the
acceptance graph built straight from the window rule, and that in turn
against exhaustive enumeration on tiny inputs.
"""
import itertools
import math
from fractions import Fraction


def acceptance_graph(det, ref):
    """Edges i -> j where ref[j] lies in [t - l/2, t + l/2] of device beat i."""
    adj = []
    for i, t in enumerate(det):
        l = det[1] - det[0] if i == 0 else det[i] - det[i - 1]
        lo, hi = Fraction(t) - Fraction(l, 2), Fraction(t) + Fraction(l, 2)
        adj.append([j for j, r in enumerate(ref) if lo <= r <= hi])
    return adj


def kuhn_max_matching(adj, n_right):
    match_r = [-1] * n_right

    def augment(u, seen):
        for v in adj[u]:
            if v in seen:
                continue
            seen.add(v)
            if match_r[v] < 0 or augment(match_r[v], seen):
                match_r[v] = u
                return True
        return False

    return sum(augment(u, set()) for u in range(len(adj)))


def brute_max_matching(adj, n_right):
    best = 0
    n = len(adj)
    choices = [[-1] + a for a in adj]
    for combo in itertools.product(*choices):
        used = [c for c in combo if c >= 0]
        if len(used) == len(set(used)):
            best = max(best, len(used))
    return best


def optimal_correct(det, ref):
    det = [int(x) for x in det]
    ref = [int(x) for x in ref]
    return kuhn_max_matching(acceptance_graph(det, ref), len(ref))


def error_stats_exact(pairs):
    e = [Fraction(ibi) - Fraction(rri) for rri, ibi in pairs]
    n = len(e)
    me = sum(e) / n
    mae = sum(abs(x) for x in e) / n
    mape = sum(abs(x) / Fraction(rri) for x, (rri, _) in zip(e, pairs)) / n * 100
    mse = sum(x * x for x in e) / n
    return float(me), float(mae), float(mape), math.sqrt(mse)


def hrv_exact(x):
    d = [b - a for a, b in zip(x[:-1], x[1:])]
    rmssd = math.sqrt(sum(Fraction(v) ** 2 for v in d) / len(d))
    pnn = 100.0 * sum(abs(v) > 50 for v in d) / len(d)
    m = Fraction(sum(x), len(x))
    var = sum((Fraction(v) - m) ** 2 for v in x) / (len(x) - 1)
    return rmssd, pnn, math.sqrt(var)
