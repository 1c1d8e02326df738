"""Independent reference computations used by the tests.

Nothing here calls into the package's arithmetic: constants are restated
and sums are recomputed from raw inputs in the most direct way.
"""
import datetime as dt
import math

import numpy as np

GWP_KG = {"CO2": 1.0, "CO": 3.0, "CH4": 21.0, "N2O": 310.0}
WEIGHTS = {"IRI": 0.55, "RD": 0.45}
DISCOUNT = 1.04


def co2e_tonnes(masses):
    """``masses[stage][pollutant]`` in kg -> tonnes CO2e."""
    kg = 0.0
    for row in masses.values():
        for p, v in row.items():
            kg += GWP_KG.get(p, 0.0) * v
    return kg / 1000.0


def brute_force_episode(records, catalog, zeta, ranges):
    """Recompute areas, discounted cost and final cost-effectiveness from raw env records."""
    area = {"IRI": 0.0, "RD": 0.0}
    cost = 0.0
    history = []
    for t, rec in enumerate(records):
        for ind in ("IRI", "RD"):
            b0, b1 = rec[f"baseline_{ind}"]
            a0, a1 = rec[f"actual_{ind}"]
            lo, hi = ranges[ind]
            area[ind] += ((b0 - a0) + (b1 - a1)) / 2.0 / (hi - lo)
        entry = catalog.entries[rec["action"]]
        cost += (entry.economic_cost + co2e_tonnes(entry.emissions.masses) * zeta) / DISCOUNT ** t
        if cost != 0:
            history.append(WEIGHTS["IRI"] * area["IRI"] / cost + WEIGHTS["RD"] * area["RD"] / cost)
        else:
            history.append(0.0)
    return area, cost, history


def central_difference(f, params, eps=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. every entry of every array in ``params``."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + eps
            up = f()
            p[i] = old - eps
            down = f()
            p[i] = old
            g[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def max_rel_error(a_list, b_list, floor=1e-8):
    worst = 0.0
    for a, b in zip(a_list, b_list):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst


def gae_by_sum(rewards, values, next_values, terminal, gamma, lam):
    """Advantages from the explicit (gamma*lambda)-weighted sum of TD errors."""
    n = len(rewards)
    deltas = [rewards[t] + (0.0 if terminal[t] else gamma * next_values[t]) - values[t] for t in range(n)]
    adv = []
    for t in range(n):
        total, w = 0.0, 1.0
        for k in range(t, n):
            total += w * deltas[k]
            if terminal[k]:
                break
            w *= gamma * lam
        adv.append(total)
    return np.array(adv)


def running_max_by_interval(values, dates, action_dates):
    """Hand-rolled reference for the default calibration rule."""
    out = list(values)
    for i in range(1, len(out)):
        crossed = any(dates[i - 1] < a <= dates[i] for a in action_dates)
        if not crossed and out[i] < out[i - 1]:
            out[i] = out[i - 1]
    return out


def chain_q_optimum(gamma, reward_a=1.0):
    return reward_a / (1.0 - gamma)


def years(d0: dt.date, d1: dt.date) -> float:
    return (d1 - d0).days / 365.25


def softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log1p_scaled(esal):
    return math.log(1.0 + esal / 1e6)
