"""Random flat two-input systems for round-trip experiments.

A system is generated directly in triangular coordinates: the z-partition is
simulated under the two-input bounds, each level is affine in the variables
it is solved for (so the rank conditions hold), and the result is written in
scrambled coordinates through invertible polynomial changes.

The generated levels are one triangular presentation of the system. The
canonical filtration found by the flatness test can have fewer steps.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .normalform import Parameterization, max_shifts
from .symkernel import ONE, ZERO, Expr, Var, solve_for, substitute, yvar
from .system import DiscreteSystem


@dataclass(frozen=True)
class RandomSystemConfig:
    max_levels: int = 3
    max_states: int = 6
    coupling_terms: int = 2
    quadratic_shears: int = 1
    linear_mixing: bool = True
    coeff_range: int = 3


@dataclass
class GeneratedSystem:
    system: DiscreteSystem
    hat_states: list[Var]
    hat_inputs: list[Var]
    hat_f: dict[Var, Expr]
    level: dict[Var, int]
    z: list[list[Var]]
    flat_hat: list[Var]
    # x in terms of hat states, u in terms of hat states and inputs
    to_scrambled: dict[Var, Expr]
    to_hat: dict[Var, Expr]
    seed: int = 0
    meta: dict = field(default_factory=dict)


def _nonzero(rng: random.Random, r: int) -> int:
    c = 0
    while c == 0:
        c = rng.randint(-r, r)
    return c


def _structure(rng: random.Random, cfg: RandomSystemConfig):
    """Simulated z-partition: (levels of states, z blocks, flat hat variables)."""
    for _ in range(200):
        kbar = rng.randint(2, cfg.max_levels)
        u1, u2 = Var("v1", "input"), Var("v2", "input")
        level: dict[Var, int] = {}
        if rng.random() < 0.5:
            z = [[u1, u2]]
            zc = None
        else:
            z = [[u2]]
            zc = u1
        redundant: Var | None = None
        ok = True
        for k in range(1, kbar):
            prev = z[k - 1]
            if len(prev) == 2 and redundant is None and k >= 2 and rng.random() < 0.3:
                dim = 1
                redundant = prev[0]
            else:
                dim = len(prev)
            if zc is not None and dim != 1:
                ok = False
                break
            new = [Var(f"h{k}_{i + 1}", "state") for i in range(dim)]
            for s in new:
                level[s] = k
            pool = new + ([zc] if zc is not None else [])
            if len(pool) > 2:
                ok = False
                break
            if k == kbar - 1 or len(pool) == 1 or rng.random() < 0.5:
                z.append(pool)
                zc = None
            else:
                i = rng.randrange(2)
                z.append([pool[i]])
                zc = pool[1 - i]
        if not ok or zc is not None:
            continue
        last = z[kbar - 1]
        if redundant is not None:
            if len(last) != 1:
                continue
            top_dim = 1
        else:
            if len(last) == 2:
                top_dim = rng.choice([1, 2])
                if top_dim == 1:
                    redundant = last[0]
            else:
                continue
        top = [Var(f"h{kbar}_{i + 1}", "state") for i in range(top_dim)]
        for s in top:
            level[s] = kbar
        if len(level) > cfg.max_states:
            continue
        flat = top + ([redundant] if redundant is not None else [])
        return kbar, level, z, flat, redundant
    raise RuntimeError("could not sample a structure")


def _random_poly(rng, variables, cfg, degree=2) -> Expr:
    e = ZERO
    vs = sorted(variables, key=lambda v: v.sort_key)
    if not vs:
        return e
    for _ in range(rng.randint(0, cfg.coupling_terms)):
        d = rng.randint(1, degree)
        m = ONE
        for _ in range(d):
            m = m * Expr.var(rng.choice(vs))
        e = e + _nonzero(rng, cfg.coeff_range) * m
    return e


def random_triangular(rng: random.Random, cfg: RandomSystemConfig):
    kbar, level, z, flat, redundant = _structure(rng, cfg)
    states = sorted(level, key=lambda s: (-level[s], s.sort_key))
    inputs = [Var("v1", "input"), Var("v2", "input")]
    f: dict[Var, Expr] = {}
    for k in range(kbar, 0, -1):
        block = [s for s in states if level[s] == k]
        known = [s for s in states if level[s] == kbar] + [v for b in z[k:] for v in b]
        unknown = [v for v in z[k - 1] if v != redundant]
        if len(unknown) != len(block):
            raise RuntimeError("inconsistent structure")
        extra = [redundant] if redundant in z[k - 1] else []
        # unimodular mixing of the unknowns: one random shear
        mixed = [Expr.var(v) for v in unknown]
        if len(mixed) == 2 and rng.random() < 0.5:
            mixed[1] = mixed[1] + rng.randint(-2, 2) * mixed[0]
        for s, w in zip(block, mixed):
            coef = Expr.const(_nonzero(rng, 2))
            knowns_state = [v for v in known if v.kind == "state"]
            if knowns_state and rng.random() < 0.4:
                coef = coef * (Expr.var(rng.choice(knowns_state)) + 1)
            g = _random_poly(rng, known + extra, cfg)
            f[s] = coef * w + g
    return kbar, level, z, flat, states, inputs, f


def _state_scramble(rng, states, level, cfg):
    """x = A(h) built from elementary shears; returns (A, A^{-1}) as maps."""
    steps = []
    # structure-preserving shears: lower-level coordinate plus higher-level terms
    for _ in range(cfg.quadratic_shears + rng.randint(0, 1)):
        low = rng.choice(states)
        higher = [s for s in states if level[s] > level[low] or (level[s] == level[low] and s != low)]
        if not higher:
            continue
        d = 2 if len(steps) < cfg.quadratic_shears else 1
        m = ONE
        for _ in range(d):
            m = m * Expr.var(rng.choice(higher))
        steps.append((low, _nonzero(rng, 2) * m))
    if cfg.linear_mixing and len(states) > 1 and rng.random() < 0.5:
        a, b = rng.sample(states, 2)
        steps.append((a, _nonzero(rng, 2) * Expr.var(b)))
    # x = S_n(...S_1(h)), each S_i shifting one coordinate
    cur = {s: Expr.var(s) for s in states}
    for tgt, term in steps:
        cur = dict(cur)
        cur[tgt] = cur[tgt] + substitute(term, cur)
    # h = S_1^{-1}(...S_n^{-1}(x))
    inv = {s: Expr.var(s) for s in states}
    for tgt, term in steps:
        inv = {k: substitute(v, {tgt: Expr.var(tgt) - term}) for k, v in inv.items()}
    return cur, inv


def random_flat_system(seed: int, cfg: RandomSystemConfig | None = None) -> GeneratedSystem:
    """A random flat two-input system in scrambled coordinates x, u."""
    cfg = cfg or RandomSystemConfig()
    rng = random.Random(seed)
    for _ in range(50):
        kbar, level, z, flat, states, inputs, fh = random_triangular(rng, cfg)
        A, Ainv = _state_scramble(rng, states, level, cfg)
        # x_i named after position; A maps hat -> scrambled values
        xs = [Var(f"x{i + 1}", "state") for i in range(len(states))]
        us = [Var(f"u{j + 1}", "input") for j in range(2)]
        h2x = dict(zip(states, xs))
        v2u = dict(zip(inputs, us))
        # input scramble: u_j = v_j + c * (poly in h and the other v)
        B = {v: Expr.var(v) for v in inputs}
        if rng.random() < 0.7:
            j = rng.randrange(2)
            other = inputs[1 - j]
            term = _nonzero(rng, 2) * Expr.var(other)
            if rng.random() < 0.5:
                term = term + _random_poly(rng, states, cfg)
            B[inputs[j]] = B[inputs[j]] + term
            Binv_j = (inputs[j], Expr.var(inputs[j]) - term)
        else:
            Binv_j = None
        # x = A(h) renamed, u = B(h, v) renamed
        # expressions of x in h: A[s] is in h vars
        x_of_h = {h2x[s]: A[s] for s in states}
        u_of_hv = {v2u[v]: B[v] for v in inputs}
        # h in terms of x: Ainv is in h-named vars standing for x values
        h_of_x = {s: substitute(Ainv[s], {t: Expr.var(h2x[t]) for t in states}) for s in states}
        v_of_hu = {v: Expr.var(v) for v in inputs}
        if Binv_j is not None:
            v_of_hu[Binv_j[0]] = Binv_j[1]
        v_of_xu = {
            v: substitute(substitute(e, {w: Expr.var(v2u[w]) for w in inputs}), h_of_x) for v, e in v_of_hu.items()
        }
        # x+ = A(h+) with h+ = f_hat(h, v), everything through h(x), v(x,u)
        back = dict(h_of_x)
        back.update(v_of_xu)
        hplus = {s: substitute(fh[s], back) for s in states}
        f = []
        for s in states:
            f.append(substitute(A[s], hplus))
        sys = DiscreteSystem(tuple(xs), tuple(us), tuple(f), f"random{seed}")
        try:
            sys.check_rank_assumptions()
        except ValueError:
            continue
        to_hat = {}
        to_hat.update({s: e for s, e in h_of_x.items()})
        to_hat.update(v_of_xu)
        gen = GeneratedSystem(
            sys, states, inputs, fh, level, z, flat, {**x_of_h, **u_of_hv}, to_hat, seed,
            {"kbar": kbar, "n": len(states), "x_of_h_names": {h2x[s].name: s.name for s in states}},
        )
        return gen
    raise RuntimeError("could not generate a full-rank system")


def oracle_parameterization(gen: GeneratedSystem) -> Parameterization:
    """Descent on the generated triangle, independent of the pipeline's coordinates."""
    ys = [yvar(j + 1) for j in range(2)]
    P = {v: Expr.var(y) for v, y in zip(gen.flat_hat, ys)}
    kbar = max(gen.level.values())
    for k in range(kbar, 0, -1):
        block = [s for s in gen.hat_states if gen.level[s] == k]
        eqs = []
        for s in block:
            shifted = substitute(P[s], {v: Expr.var(v.shifted(1)) for v in P[s].free_vars() if v.kind == "flat-output"})
            eqs.append(shifted - substitute(gen.hat_f[s], P))
        unknowns = [v for v in gen.z[k - 1] if v not in P]
        if unknowns:
            P.update(solve_for(eqs, unknowns))
    Fx = {x: substitute(gen.to_scrambled[x], P) for x in gen.system.states}
    Fu = {u: substitute(gen.to_scrambled[u], P) for u in gen.system.inputs}
    flat = [gen.to_hat[v] for v in gen.flat_hat]
    R = max_shifts(list(Fx.values()) + list(Fu.values()), 2)
    return Parameterization(Fx, Fu, R, flat, tuple(ys))
