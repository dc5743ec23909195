"""Rate-allocation and beamforming optimization at fixed compression ratios.

The nonconvex sum-rate problem is attacked by successive convex
approximation: signal terms are lower-bounded by first-order tangents at
the current point, interference terms are boxed by slack variables, and
the resulting convex program is solved by the in-house barrier method.
Each round re-expands around the new optimum, which keeps the feasible
set an inner approximation of the true one and the objective monotone.

Complex beams are real-stacked for the solver (real and imaginary parts
concatenated), so a K-user, M-antenna instance has 5K + 2M(K+1) real
unknowns; counting each complex entry once, that is 5K + (K+1)M.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .comp_load import CompLoadSpec, total_power
from .convex_core import (Constraint, ConvexProgram, SolverOptions, solve_barrier,
                          strictly_feasible)
from .errors import InfeasibleProblem, NumericalFailure
from .rsma_rates import LN2, Allocation, RateReport, rate_report
from .scenario import Scenario


@dataclass
class SubproblemState:
    """Current expansion point: beams plus the four slack families.

    ``beta``/``delta`` are None when no common stream is used. All slack
    entries must stay strictly positive; the tangent expressions divide
    by them.
    """

    common_beam: np.ndarray
    private_beams: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray | None
    gamma: np.ndarray
    delta: np.ndarray | None
    iteration: int = 0
    objective_bps: float = float("nan")

    @property
    def has_common(self) -> bool:
        return self.delta is not None

    def check(self):
        for name in ("alpha", "gamma") + (("beta", "delta") if self.has_common else ()):
            v = getattr(self, name)
            if v is None or np.any(~np.isfinite(v)) or np.any(v <= 0):
                raise ValueError(f"subproblem state: {name} must be strictly positive")


@dataclass
class ScaOptions:
    tol_sca: float = 1e-5         # relative objective change declaring convergence
    max_sca_iters: int = 50
    power_backoff: float = 0.9    # fraction of the budget spent by the initial beams
    warm_t0: float = 100.0        # barrier restart weight on warm-started rounds
    init_jitter: float = 0.0      # relative random perturbation of the initial beams
    jitter_seed: int = 0
    keep_iterates: bool = False   # retain every round's allocation and state
    solver: SolverOptions = field(default_factory=SolverOptions)


@dataclass
class ScaResult:
    allocation: Allocation
    report: RateReport
    trace: np.ndarray             # subproblem optimum per round, bit/s
    state: SubproblemState
    status: str                   # converged | max_iter
    iterations: int
    rows: list = field(default_factory=list)  # (iter, objective_bps, kkt, ms)
    solver_statuses: list = field(default_factory=list)
    iterates: list = field(default_factory=list)  # (Allocation, SubproblemState) per round


def _real_stack(row):
    """Vectors r, s with Re(row @ w) = r @ u and Im(row @ w) = s @ u for
    u = [Re w; Im w]; ``row`` is a channel row, already conjugate-transposed."""
    r = np.concatenate([row.real, -row.imag])
    s = np.concatenate([row.imag, row.real])
    return r, s


def _private_tangent_coeffs(gamma0: float, alpha0: float):
    """Tangent of sqrt(gamma*alpha) at the expansion point: constant and
    the two linear coefficients."""
    c0 = np.sqrt(gamma0 * alpha0)
    ca = 0.5 * np.sqrt(gamma0 / alpha0)
    cg = 0.5 * np.sqrt(alpha0 / gamma0)
    return c0, ca, cg


def _beam_gains(s: Scenario, w0, wp):
    w = np.concatenate([np.asarray(w0)[None, :], np.asarray(wp)], axis=0)
    return np.abs(s.channels @ w.T) ** 2  # (K, K+1), column 0 = common


def _self_consistent_slacks(s: Scenario, w0, wp, common: bool):
    g = _beam_gains(s, w0, wp)
    prv = g[:, 1:]
    sig = np.diagonal(prv).copy()
    alpha = np.sum(prv, axis=1) - sig + s.noise_power_w
    gamma = sig / alpha
    if not common:
        return alpha, None, gamma, None
    beta = np.sum(prv, axis=1) + s.noise_power_w
    delta = g[:, 0] / beta
    return alpha, beta, gamma, delta


def _rotate_private_phases(s: Scenario, wp):
    """Rotate each private beam so its own user sees a real nonnegative amplitude."""
    wp = np.array(wp, dtype=complex)
    for k in range(s.num_users):
        z = s.channels[k] @ wp[k]
        if abs(z) > 0:
            wp[k] *= np.conj(z) / abs(z)
    return wp


def init_point(s: Scenario, spec: CompLoadSpec, rho, common_stream: bool = True,
               power_backoff: float = 0.9, jitter: float = 0.0, jitter_seed: int = 0):
    """Matched-filter starting point with an equal power split.

    Private beams point along their own channels, the common beam along
    the sum of normalized channels; slack variables are set to their
    self-consistent values, and the common-rate split is spread equally.
    """
    rho = np.asarray(rho, dtype=float)
    pcomp = total_power(spec, rho, s.comp_power_coeff)
    if pcomp >= s.max_power_w:
        raise InfeasibleProblem(
            "sca", ["total_power"],
            f"computation power {pcomp:.6g} W exhausts the budget {s.max_power_w:.6g} W")
    k, m = s.num_users, s.num_antennas
    n_beams = k + 1 if common_stream else k
    per_beam = power_backoff * (s.max_power_w - pcomp) / n_beams

    norms = np.linalg.norm(s.channels, axis=1)
    wp = (np.sqrt(per_beam) * (s.channels.conj().T / norms).T)
    if common_stream:
        d = np.sum((s.channels.conj().T / norms).T, axis=0)
        if np.linalg.norm(d) < 1e-12:
            d = s.channels[0].conj()
        w0 = np.sqrt(per_beam) * d / np.linalg.norm(d)
    else:
        w0 = np.zeros(m, dtype=complex)
    if jitter > 0:
        rng = np.random.default_rng(jitter_seed)
        scale = jitter * np.sqrt(per_beam)
        wp = wp + scale * (rng.standard_normal(wp.shape) + 1j * rng.standard_normal(wp.shape)) / np.sqrt(2)
        if common_stream:
            w0 = w0 + scale * (rng.standard_normal(m) + 1j * rng.standard_normal(m)) / np.sqrt(2)
        total = np.sum(np.abs(w0) ** 2) + np.sum(np.abs(wp) ** 2)
        budget = power_backoff * (s.max_power_w - pcomp)
        fix = np.sqrt(budget / total)
        wp, w0 = wp * fix, w0 * fix
    wp = _rotate_private_phases(s, wp)

    alpha, beta, gamma, delta = _self_consistent_slacks(s, w0, wp, common_stream)
    if common_stream:
        r0c = s.bandwidth_hz * float(np.min(np.log1p(delta))) / LN2
        a = np.full(k, r0c / k)
    else:
        a = np.zeros(k)
    state = SubproblemState(common_beam=w0, private_beams=wp, alpha=alpha, beta=beta,
                            gamma=gamma, delta=delta, iteration=0)
    state.check()
    alloc = Allocation(common_beam=w0, private_beams=wp, rate_split=a, ratios=rho)
    return alloc, state


def state_from_beams(s: Scenario, spec: CompLoadSpec, rho, w0, wp, a,
                     common_stream: bool = True, margin: float = 1e-4):
    """Build a warm-start pair from existing beams.

    Rescales into the current power budget, injects a small common beam
    and rate split when the incumbent carries none, and derives
    self-consistent slacks.
    """
    rho = np.asarray(rho, dtype=float)
    pcomp = total_power(spec, rho, s.comp_power_coeff)
    if pcomp >= s.max_power_w:
        raise InfeasibleProblem("sca", ["total_power"],
                                f"computation power {pcomp:.6g} W exhausts the budget")
    budget = s.max_power_w - pcomp
    w0 = np.array(w0, dtype=complex)
    wp = np.array(wp, dtype=complex)
    a = np.array(a, dtype=float)

    if common_stream and np.sum(np.abs(w0) ** 2) < 1e-14 * budget:
        norms = np.linalg.norm(s.channels, axis=1)
        d = np.sum((s.channels.conj().T / norms).T, axis=0)
        if np.linalg.norm(d) < 1e-12:
            d = s.channels[0].conj()
        w0 = np.sqrt(1e-4 * budget) * d / np.linalg.norm(d)
    total = np.sum(np.abs(w0) ** 2) + np.sum(np.abs(wp) ** 2)
    cap = (1.0 - margin) * budget
    if total > cap:
        fix = np.sqrt(cap / total)
        w0, wp = w0 * fix, wp * fix
    wp = _rotate_private_phases(s, wp)
    alpha, beta, gamma, delta = _self_consistent_slacks(s, w0, wp, common_stream)
    if common_stream:
        r0c = s.bandwidth_hz * float(np.min(np.log1p(delta))) / LN2
        if np.sum(a) <= 0:
            a = np.full(s.num_users, 1e-3 * r0c / s.num_users)
        elif np.sum(a) > (1.0 - margin) * r0c:
            a = a * (1.0 - margin) * r0c / np.sum(a)
    else:
        a = np.zeros(s.num_users)
    state = SubproblemState(common_beam=w0, private_beams=wp, alpha=alpha, beta=beta,
                            gamma=gamma, delta=delta, iteration=0)
    state.check()
    return Allocation(w0, wp, a, rho), state


def build_subproblem(s: Scenario, spec: CompLoadSpec, rho,
                     state: SubproblemState) -> ConvexProgram:
    """Emit the convex inner approximation around ``state``.

    Decision vector (all entries pre-scaled to order one): rate splits in
    bandwidth units, real-stacked beams in units of the transmit budget's
    square root, then the interference, denominator, private-SINR and
    common-SINR slacks, each normalized by its expansion value. The
    program's metadata carries ``decode``/``encode`` between solver space
    and physical units.
    """
    state.check()
    rho = np.asarray(rho, dtype=float)
    common = state.has_common
    k, m = s.num_users, s.num_antennas
    bw = 2 * m
    n_beams = k + 1 if common else k
    sigma2 = s.noise_power_w
    b_hz = s.bandwidth_hz

    pcomp = total_power(spec, rho, s.comp_power_coeff)
    p_budget = s.max_power_w - pcomp
    if p_budget <= 0:
        raise InfeasibleProblem("sca", ["total_power"], "no transmit budget left")
    sw = np.sqrt(p_budget)

    if common:
        ia = np.arange(k)
        iu0 = k
    else:
        ia = None
        iu0 = 0
    iu = iu0 + np.arange(n_beams * bw)
    off = iu0 + n_beams * bw
    ial = off + np.arange(k)
    off += k
    if common:
        ibe = off + np.arange(k)
        off += k
    else:
        ibe = None
    iga = off + np.arange(k)
    off += k
    if common:
        ide = off + np.arange(k)
        off += k
    else:
        ide = None
    n = off

    def beam_slice(j):
        return slice(iu0 + j * bw, iu0 + (j + 1) * bw)

    # private beam of user i sits at slot i+1 when a common beam is present
    pslot = (lambda i: i + 1) if common else (lambda i: i)

    rs = [_real_stack(s.channels[i]) for i in range(k)]
    s_al = state.alpha.copy()
    s_ga = state.gamma.copy()
    if common:
        s_be = state.beta.copy()
        s_de = state.delta.copy()
        z0 = s.channels @ state.common_beam  # expansion-point common amplitudes
    weights = 1.0 / rho
    cmin_hat = s.min_semantic_rate_bps / b_hz

    def objective_value(x):
        ga = s_ga * x[iga]
        val = -float(np.sum(weights * np.log1p(ga))) / LN2
        if common:
            val -= float(np.sum(weights * x[ia]))
        return val

    def objective(x):
        grad = np.zeros(n)
        hdiag = np.zeros(n)
        ga = s_ga * x[iga]
        val = -float(np.sum(weights * np.log1p(ga))) / LN2
        grad[iga] = -weights * s_ga / ((1.0 + ga) * LN2)
        hdiag[iga] = weights * s_ga ** 2 / ((1.0 + ga) ** 2 * LN2)
        if common:
            val -= float(np.sum(weights * x[ia]))
            grad[ia] = -weights
        return val, grad, hdiag

    constraints = []

    def add(label, value, grad, hess=None, hess_constant=False):
        constraints.append(Constraint(label, value, grad, hess, hess_constant))

    # total transmit power inside the remaining budget
    def pow_val(x):
        return float(np.dot(x[iu], x[iu])) - 1.0

    def pow_grad(x):
        g = np.zeros(n)
        g[iu] = 2.0 * x[iu]
        return g

    pow_h = np.zeros(n)
    pow_h[iu] = 2.0
    add("power", pow_val, pow_grad, hess=lambda x: pow_h, hess_constant=True)

    if common:
        # total split rate within each user's common-stream decode rate
        for j in range(k):
            sde = s_de[j]
            idx = ide[j]

            def val(x, sde=sde, idx=idx):
                return float(np.sum(x[ia])) - np.log1p(sde * x[idx]) / LN2

            def grad(x, sde=sde, idx=idx):
                g = np.zeros(n)
                g[ia] = 1.0
                g[idx] = -sde / ((1.0 + sde * x[idx]) * LN2)
                return g

            def hess(x, sde=sde, idx=idx):
                h = np.zeros(n)
                h[idx] = sde ** 2 / ((1.0 + sde * x[idx]) ** 2 * LN2)
                return h

            add(f"common_rate_bound[{j}]", val, grad, hess)

    # per-user minimum semantic rate
    for j in range(k):
        wgt = weights[j]
        sga = s_ga[j]
        idx = iga[j]
        target = cmin_hat[j]

        def val(x, wgt=wgt, sga=sga, idx=idx, target=target, j=j):
            implied = np.log1p(sga * x[idx]) / LN2
            if common:
                implied += x[ia[j]]
            return target - wgt * implied

        def grad(x, wgt=wgt, sga=sga, idx=idx, j=j):
            g = np.zeros(n)
            g[idx] = -wgt * sga / ((1.0 + sga * x[idx]) * LN2)
            if common:
                g[ia[j]] = -wgt
            return g

        def hess(x, wgt=wgt, sga=sga, idx=idx):
            h = np.zeros(n)
            h[idx] = wgt * sga ** 2 / ((1.0 + sga * x[idx]) ** 2 * LN2)
            return h

        add(f"min_semantic[{j}]", val, grad, hess)

    # interference at each user bounded by its slack
    for j in range(k):
        r, si = rs[j]
        others = [pslot(i) for i in range(k) if i != j]
        sal = s_al[j]

        def val(x, r=r, si=si, others=others, sal=sal, j=j):
            acc = sigma2
            for t in others:
                u = x[beam_slice(t)]
                acc += (sw ** 2) * ((r @ u) ** 2 + (si @ u) ** 2)
            return acc / sal - x[ial[j]]

        def grad(x, r=r, si=si, others=others, sal=sal, j=j):
            g = np.zeros(n)
            for t in others:
                sl = beam_slice(t)
                u = x[sl]
                g[sl] = 2.0 * (sw ** 2) * ((r @ u) * r + (si @ u) * si) / sal
            g[ial[j]] = -1.0
            return g

        h = np.zeros((n, n))
        blk = 2.0 * (sw ** 2) * (np.outer(r, r) + np.outer(si, si)) / sal
        for t in others:
            sl = beam_slice(t)
            h[sl, sl.start:sl.stop] = blk
        add(f"interference_upper[{j}]", val, grad,
            hess=(lambda x, h=h: h), hess_constant=True)

    # tangent lower bound on each private signal amplitude
    tangent_cs = [_private_tangent_coeffs(s_ga[j], s_al[j]) for j in range(k)]
    c0s = np.array([t[0] for t in tangent_cs])
    cas = np.array([t[1] for t in tangent_cs])
    cgs = np.array([t[2] for t in tangent_cs])
    norms20 = np.maximum(np.abs(c0s), 1e-300)
    for j in range(k):
        r, _ = rs[j]
        c0, ca, cg = tangent_cs[j]
        norm = norms20[j]
        sl = beam_slice(pslot(j))

        def val(x, r=r, c0=c0, ca=ca, cg=cg, norm=norm, sl=sl, j=j):
            tangent = c0 + ca * s_al[j] * (x[ial[j]] - 1.0) + cg * s_ga[j] * (x[iga[j]] - 1.0)
            return (tangent - sw * (r @ x[sl])) / norm

        def grad(x, r=r, ca=ca, cg=cg, norm=norm, sl=sl, j=j):
            g = np.zeros(n)
            g[ial[j]] = ca * s_al[j] / norm
            g[iga[j]] = cg * s_ga[j] / norm
            g[sl] = -sw * r / norm
            return g

        add(f"private_tangent[{j}]", val, grad)

    if common:
        # common-stream denominator bounded by its slack
        for j in range(k):
            r, si = rs[j]
            slots = [pslot(i) for i in range(k)]
            sbe = s_be[j]

            def val(x, r=r, si=si, slots=slots, sbe=sbe, j=j):
                acc = sigma2
                for t in slots:
                    u = x[beam_slice(t)]
                    acc += (sw ** 2) * ((r @ u) ** 2 + (si @ u) ** 2)
                return acc / sbe - x[ibe[j]]

            def grad(x, r=r, si=si, slots=slots, sbe=sbe, j=j):
                g = np.zeros(n)
                for t in slots:
                    sl = beam_slice(t)
                    u = x[sl]
                    g[sl] = 2.0 * (sw ** 2) * ((r @ u) * r + (si @ u) * si) / sbe
                g[ibe[j]] = -1.0
                return g

            h = np.zeros((n, n))
            blk = 2.0 * (sw ** 2) * (np.outer(r, r) + np.outer(si, si)) / sbe
            for t in slots:
                sl = beam_slice(t)
                h[sl, sl.start:sl.stop] = blk
            add(f"common_denominator[{j}]", val, grad,
                hess=(lambda x, h=h: h), hess_constant=True)

        # tangent bound tying the common signal to the delta/beta product
        sl0 = beam_slice(0)
        zrs = z0.real.astype(float)
        zis = z0.imag.astype(float)
        zsqs = zrs ** 2 + zis ** 2
        d0s = s_de - s_be
        norm26 = np.maximum(np.maximum(zsqs, 0.25 * (s_de + s_be) ** 2), 1e-300)
        for j in range(k):
            r, si = rs[j]
            zr, zi = float(z0[j].real), float(z0[j].imag)
            zsq = zr * zr + zi * zi
            d0 = float(s_de[j] - s_be[j])
            norm = norm26[j]

            def val(x, r=r, si=si, zr=zr, zi=zi, zsq=zsq, d0=d0, norm=norm, j=j):
                de = s_de[j] * x[ide[j]]
                be = s_be[j] * x[ibe[j]]
                rhs = 0.25 * ((de + be) ** 2 - 2.0 * d0 * (de - be) + d0 * d0)
                u = x[sl0]
                lin = 2.0 * sw * (zr * (r @ u) + zi * (si @ u)) - zsq
                return (rhs - lin) / norm

            def grad(x, r=r, si=si, zr=zr, zi=zi, d0=d0, norm=norm, j=j):
                g = np.zeros(n)
                de = s_de[j] * x[ide[j]]
                be = s_be[j] * x[ibe[j]]
                g[ide[j]] = (0.5 * (de + be) - 0.5 * d0) * s_de[j] / norm
                g[ibe[j]] = (0.5 * (de + be) + 0.5 * d0) * s_be[j] / norm
                g[sl0] = -2.0 * sw * (zr * r + zi * si) / norm
                return g

            h = np.zeros((n, n))
            v = np.zeros(n)
            v[ide[j]] = s_de[j]
            v[ibe[j]] = s_be[j]
            h += 0.5 * np.outer(v, v) / norm
            add(f"common_tangent[{j}]", val, grad,
                hess=(lambda x, h=h: h), hess_constant=True)

    # nonnegativity of splits and slacks
    def add_nonneg(prefix, indices):
        for j, idx in enumerate(indices):
            def val(x, idx=idx):
                return -x[idx]

            def grad(x, idx=idx):
                g = np.zeros(n)
                g[idx] = -1.0
                return g

            add(f"nonneg_{prefix}[{j}]", val, grad)

    if common:
        add_nonneg("a", ia)
    add_nonneg("alpha", ial)
    if common:
        add_nonneg("beta", ibe)
    add_nonneg("gamma", iga)
    if common:
        add_nonneg("delta", ide)

    # Vectorized batch evaluators; must agree with the closures above.
    rmat = np.array([r for r, _ in rs])              # (K, 2M)
    smat = np.array([si for _, si in rs])
    arange_k = np.arange(k)
    m_total = len(constraints)
    sw2 = sw * sw

    def _core(x):
        u_all = x[iu].reshape(n_beams, bw)
        re = rmat @ u_all.T                           # (K, n_beams) amplitudes / sw
        im = smat @ u_all.T
        gains = sw2 * (re ** 2 + im ** 2)
        pg = gains[:, 1:] if common else gains        # private-beam gains
        rep = re[:, 1:] if common else re
        return u_all, re, im, pg, rep

    def fused_values(x):
        u_all, re, im, pg, rep = _core(x)
        al = x[ial]
        ga = x[iga]
        rowsum = pg.sum(axis=1)
        own = np.diagonal(pg)
        parts = [np.array([float(np.dot(x[iu], x[iu])) - 1.0])]
        if common:
            de = x[ide]
            be = x[ibe]
            parts.append(float(np.sum(x[ia])) - np.log1p(s_de * de) / LN2)
        implied = np.log1p(s_ga * ga) / LN2
        if common:
            implied = implied + x[ia]
        parts.append(cmin_hat - weights * implied)
        parts.append((rowsum - own + sigma2) / s_al - al)
        tangent = c0s + cas * s_al * (al - 1.0) + cgs * s_ga * (ga - 1.0)
        parts.append((tangent - sw * np.diagonal(rep)) / norms20)
        if common:
            parts.append((rowsum + sigma2) / s_be - be)
            ded = s_de * de
            bed = s_be * be
            rhs = 0.25 * ((ded + bed) ** 2 - 2.0 * d0s * (ded - bed) + d0s ** 2)
            lin = 2.0 * sw * (zrs * re[:, 0] + zis * im[:, 0]) - zsqs
            parts.append((rhs - lin) / norm26)
        if common:
            parts.append(-x[ia])
        parts.append(-al)
        if common:
            parts.append(-be)
        parts.append(-ga)
        if common:
            parts.append(-de)
        return np.concatenate(parts)

    def fused_values_grads(x):
        vals = fused_values(x)
        u_all, re, im, pg, rep = _core(x)
        al = x[ial]
        ga = x[iga]
        gm = np.zeros((m_total, n))
        row = 0
        gm[0, iu] = 2.0 * x[iu]
        row += 1
        if common:
            de = x[ide]
            be = x[ibe]
            gm[row:row + k, ia] = 1.0
            gm[row + arange_k, ide] = -s_de / ((1.0 + s_de * de) * LN2)
            row += k
        gm[row + arange_k, iga] = -weights * s_ga / ((1.0 + s_ga * ga) * LN2)
        if common:
            gm[row + arange_k, ia] = -weights
        row += k
        first_private = 1 if common else 0
        for j in range(k):
            mask = np.zeros(n_beams)
            mask[first_private:] = 1.0
            mask[pslot(j)] = 0.0
            cre = (2.0 * sw2 / s_al[j]) * re[j] * mask
            cim = (2.0 * sw2 / s_al[j]) * im[j] * mask
            gm[row + j, iu] = (np.outer(cre, rmat[j]) + np.outer(cim, smat[j])).reshape(-1)
        gm[row + arange_k, ial] = -1.0
        row += k
        gm[row + arange_k, ial] = cas * s_al / norms20
        gm[row + arange_k, iga] = cgs * s_ga / norms20
        for j in range(k):
            sl = beam_slice(pslot(j))
            gm[row + j, sl] = -sw * rmat[j] / norms20[j]
        row += k
        if common:
            for j in range(k):
                mask = np.zeros(n_beams)
                mask[first_private:] = 1.0
                cre = (2.0 * sw2 / s_be[j]) * re[j] * mask
                cim = (2.0 * sw2 / s_be[j]) * im[j] * mask
                gm[row + j, iu] = (np.outer(cre, rmat[j]) + np.outer(cim, smat[j])).reshape(-1)
            gm[row + arange_k, ibe] = -1.0
            row += k
            ded = s_de * de
            bed = s_be * be
            gm[row + arange_k, ide] = (0.5 * (ded + bed) - 0.5 * d0s) * s_de / norm26
            gm[row + arange_k, ibe] = (0.5 * (ded + bed) + 0.5 * d0s) * s_be / norm26
            u0block = -2.0 * sw * (zrs[:, None] * rmat + zis[:, None] * smat) / norm26[:, None]
            gm[row:row + k, sl0] = u0block
            row += k
        if common:
            gm[row + arange_k, ia] = -1.0
            row += k
        gm[row + arange_k, ial] = -1.0
        row += k
        if common:
            gm[row + arange_k, ibe] = -1.0
            row += k
        gm[row + arange_k, iga] = -1.0
        row += k
        if common:
            gm[row + arange_k, ide] = -1.0
            row += k
        return vals, gm

    def decode(x):
        a = (b_hz * x[ia]) if common else np.zeros(k)
        u = x[iu].reshape(n_beams, bw)
        w = sw * (u[:, :m] + 1j * u[:, m:])
        w0 = w[0] if common else np.zeros(m, dtype=complex)
        wp = w[1:] if common else w
        alpha = s_al * x[ial]
        gamma = s_ga * x[iga]
        beta = s_be * x[ibe] if common else None
        delta = s_de * x[ide] if common else None
        return a, w0, wp, alpha, beta, gamma, delta

    def encode(a, w0, wp, alpha, beta, gamma, delta):
        x = np.zeros(n)
        if common:
            x[ia] = np.asarray(a, dtype=float) / b_hz
            beams = np.concatenate([np.asarray(w0)[None, :], np.asarray(wp)], axis=0)
        else:
            beams = np.asarray(wp)
        u = np.concatenate([beams.real, beams.imag], axis=1) / sw
        x[iu] = u.reshape(-1)
        x[ial] = np.asarray(alpha) / s_al
        x[iga] = np.asarray(gamma) / s_ga
        if common:
            x[ibe] = np.asarray(beta) / s_be
            x[ide] = np.asarray(delta) / s_de
        return x

    program = ConvexProgram(
        dimension=n,
        objective=objective,
        constraints=constraints,
        metadata={
            "decode": decode,
            "encode": encode,
            "power_budget": p_budget,
            "bandwidth_hz": b_hz,
            "n_complex_counted": (5 * k + (k + 1) * m) if common else (2 * k + k * m),
            "common_stream": common,
            "fused_values": fused_values,
            "fused_values_grads": fused_values_grads,
            "objective_value": objective_value,
        },
    )
    return program


def _warm_start_vector(program: ConvexProgram, state: SubproblemState, a):
    """Strictly feasible start from the expansion point, nudging slacks
    inward when the raw point sits on a constraint boundary."""
    enc = program.metadata["encode"]
    common = program.metadata["common_stream"]
    b_hz = program.metadata["bandwidth_hz"]

    def candidate(mrg):
        shrink = 1.0 - mrg / 4.0
        alpha = state.alpha * (1.0 + mrg)
        gamma = state.gamma * (1.0 - 2.0 * mrg)
        if common:
            beta = state.beta * (1.0 + mrg)
            delta = state.delta * (1.0 - 2.0 * mrg)
            cap = (1.0 - mrg) * float(np.min(np.log1p(delta))) / LN2 * b_hz
            a_use = np.asarray(a, dtype=float).copy()
            tot = float(np.sum(a_use))
            if tot > cap:
                a_use *= max(cap, 0.0) / tot if tot > 0 else 0.0
            a_use = np.maximum(a_use, 1e-9 * b_hz * mrg)
        else:
            beta = delta = None
            a_use = np.zeros(len(state.alpha))
        return enc(a_use, state.common_beam * shrink, state.private_beams * shrink,
                   alpha, beta, gamma, delta)

    x = candidate(0.0)
    if strictly_feasible(program, x, margin=1e-12):
        return x
    for mrg in (1e-7, 1e-5, 1e-3, 1e-2):
        x = candidate(mrg)
        if strictly_feasible(program, x, margin=0.0):
            return x
    return x  # not strictly feasible; the solver will run phase 1 from here


def sca_iterate(s: Scenario, spec: CompLoadSpec, rho, opts: ScaOptions = None,
                start=None, common_stream: bool = True) -> ScaResult:
    """Run the convex-approximation loop at fixed compression ratios.

    Returns the final allocation (carrying the input ratios), its rate
    report, and the per-round objective trace. Infeasibility surfaces as
    :class:`InfeasibleProblem` naming the binding constraints.
    """
    opts = opts or ScaOptions()
    rho = np.asarray(rho, dtype=float)
    lo = np.maximum(spec.domain_min, s.min_ratio)
    if np.any(rho < lo - 1e-12) or np.any(rho > 1.0 + 1e-12):
        raise ValueError("ratios outside their admissible range")

    if start is None:
        alloc, state = init_point(s, spec, rho, common_stream=common_stream,
                                  power_backoff=opts.power_backoff,
                                  jitter=opts.init_jitter, jitter_seed=opts.jitter_seed)
    else:
        alloc, state = start
        if state.has_common != common_stream:
            raise ValueError("start state does not match the requested stream mode")
    a_cur = alloc.rate_split
    trace = []
    rows = []
    statuses = []
    iterates = []
    status = "max_iter"
    solver_template = opts.solver
    prev_t = None

    for i in range(opts.max_sca_iters):
        t_start = time.perf_counter()
        program = build_subproblem(s, spec, rho, state)
        program.x0 = _warm_start_vector(program, state, a_cur)
        t0_round = solver_template.t0 if (i == 0 and start is None) else opts.warm_t0
        sopts = SolverOptions(**{**solver_template.__dict__, "t0": t0_round})
        res = solve_barrier(program, sopts)
        prev_t = res.barrier_t
        if res.status == "infeasible":
            raise InfeasibleProblem("sca", res.infeasible_labels or ("unknown",),
                                    f"round {i}: {res.message}")
        if res.status == "numerical_failure":
            raise NumericalFailure("sca", f"round {i}: {res.message}")
        a, w0, wp, alpha, beta, gamma, delta = program.metadata["decode"](res.x)
        wp = _rotate_private_phases(s, wp)
        state = SubproblemState(common_beam=w0, private_beams=wp, alpha=alpha,
                                beta=beta, gamma=gamma, delta=delta, iteration=i + 1)
        a_cur = a
        obj_bps = -res.objective_value * s.bandwidth_hz
        state.objective_bps = obj_bps
        trace.append(obj_bps)
        statuses.append(res.status)
        rows.append((i, obj_bps, res.residuals.get("stationarity_rel", np.nan),
                     (time.perf_counter() - t_start) * 1e3))
        if opts.keep_iterates:
            iterates.append((Allocation(w0, wp, a_cur, rho), state))
        if i >= 1 and abs(trace[-1] - trace[-2]) <= opts.tol_sca * max(1.0, abs(trace[-2])):
            status = "converged"
            break

    alloc = Allocation(common_beam=state.common_beam, private_beams=state.private_beams,
                       rate_split=a_cur, ratios=rho)
    report = rate_report(s, spec, alloc)
    return ScaResult(allocation=alloc, report=report, trace=np.asarray(trace),
                     state=state, status=status, iterations=len(trace), rows=rows,
                     solver_statuses=statuses, iterates=iterates)


def write_sca_trace_csv(path, result: ScaResult):
    """Dump the per-round trace as CSV (iter, objective_bps, kkt_residual, step_time_ms)."""
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", "objective_bps", "kkt_residual", "step_time_ms"])
        for row in result.rows:
            w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
