"""The six solvers for the server/agent least-squares protocol.

Each solver advances one synchronization round at a time through
``network.execute_round``: the server broadcasts, agents reply from
their shards, the server folds the aggregated reply into its state.
Process noise (when configured) corrupts every newly computed iterated
variable, and the freshly corrupted value is what the next computation
and the next broadcast see.

Method summary:

* ipg  - keeps a preconditioner estimate K alongside x; agents return
         both the local gradient and local preconditioner residuals, the
         server refines K by a Richardson step toward (A^T A)^-1 and
         takes the preconditioned gradient step with the refined K.
* gd   - plain aggregated gradient descent.
* nag  - gradient evaluated at the extrapolated point, which is also
         what gets broadcast.
* hbm  - gradient step plus a momentum term on the last displacement.
* apc  - agents hold local solutions of their own underdetermined
         systems and project toward consensus; the server mixes the
         average with its previous estimate.
* bfgs - server-side quasi-Newton on the aggregated gradient with unit
         step; curvature violations skip the update and are recorded.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kernels
from .network import execute_round
from .noise import (
    NoProcessNoise,
    STREAM_AGENT_BASE,
    STREAM_K,
    STREAM_M,
    STREAM_X,
    STREAM_XBAR,
)

METHODS = ("ipg", "gd", "nag", "hbm", "apc", "bfgs")


def agent_gradient(shard, x):
    """g_i = A_i^T (A_i x - b_i) from the shard's own rows only."""
    return kernels.agent_gradient(shard.A, shard.AT, shard.b, x)


def agent_r_matrix(shard, K, m):
    """Stack of the agent's preconditioner residuals, one column per basis
    vector: R_i = A_i^T A_i K - (1/m) I."""
    return kernels.agent_r_matrix(shard.A, shard.AT, np.ascontiguousarray(K), 1.0 / m)


# ---------------------------------------------------------------------------


@dataclass
class IPGState:
    x: np.ndarray
    K: np.ndarray


class IPGSolver:
    """Preconditioned gradient descent with the iteratively refined K.

    freeze_k pins K to its initial value and skips the refinement round;
    with K = I and delta = alpha this reproduces gd exactly, which the
    tests rely on.
    """

    name = "ipg"

    def __init__(self, alpha, delta, freeze_k=False, K0=None):
        self.alpha = float(alpha)
        self.delta = float(delta)
        self.freeze_k = bool(freeze_k)
        self.K0 = K0

    def init_state(self, shards, d, pnoise, seed):
        x = np.zeros(d)
        K = np.zeros((d, d)) if self.K0 is None else np.array(self.K0, dtype=np.float64)
        x = pnoise.corrupt(x, STREAM_X, 0)
        if not self.freeze_k:
            K = pnoise.corrupt(K, STREAM_K, 0)
        return IPGState(x=x, K=K)

    def init_agent_states(self, shards):
        return None

    def step(self, state, shards, agent_states, pnoise, t):
        m = len(shards)
        alpha, delta, freeze = self.alpha, self.delta, self.freeze_k

        def agent(bc, shard, ast):
            x, K = bc
            g = agent_gradient(shard, x)
            if freeze:
                return (g,), ast
            return (g, agent_r_matrix(shard, K, m)), ast

        def server(agg):
            if freeze:
                (G,) = agg
                K_next = state.K
            else:
                G, R_sum = agg
                K_next = state.K - alpha * R_sum
                K_next = pnoise.corrupt(K_next, STREAM_K, t + 1)
            x_next = state.x - delta * (K_next @ G)
            x_next = pnoise.corrupt(x_next, STREAM_X, t + 1)
            return IPGState(x=x_next, K=K_next)

        out = execute_round((state.x, state.K), shards, agent, server, agent_states)
        return out.server_state, out.agent_states, out.finite

    def iterate(self, state):
        return state.x

    def internal_arrays(self, state, agent_states):
        return (state.K,)


# ---------------------------------------------------------------------------


@dataclass
class FirstOrderState:
    x: np.ndarray
    x_prev: np.ndarray = None


class GDSolver:
    name = "gd"

    def __init__(self, alpha):
        self.alpha = float(alpha)

    def init_state(self, shards, d, pnoise, seed):
        x = pnoise.corrupt(np.zeros(d), STREAM_X, 0)
        return FirstOrderState(x=x)

    def init_agent_states(self, shards):
        return None

    def step(self, state, shards, agent_states, pnoise, t):
        def agent(bc, shard, ast):
            return (agent_gradient(shard, bc[0]),), ast

        def server(agg):
            x_next = state.x - self.alpha * agg[0]
            return FirstOrderState(x=pnoise.corrupt(x_next, STREAM_X, t + 1))

        out = execute_round((state.x,), shards, agent, server, agent_states)
        return out.server_state, out.agent_states, out.finite

    def iterate(self, state):
        return state.x

    def internal_arrays(self, state, agent_states):
        return ()


class HBMSolver:
    """Heavy-ball: momentum on the previous displacement, gradient at x."""

    name = "hbm"

    def __init__(self, alpha, beta):
        self.alpha = float(alpha)
        self.beta = float(beta)

    def init_state(self, shards, d, pnoise, seed):
        x = pnoise.corrupt(np.zeros(d), STREAM_X, 0)
        return FirstOrderState(x=x, x_prev=x.copy())

    def init_agent_states(self, shards):
        return None

    def step(self, state, shards, agent_states, pnoise, t):
        def agent(bc, shard, ast):
            return (agent_gradient(shard, bc[0]),), ast

        def server(agg):
            x_next = state.x - self.alpha * agg[0] + self.beta * (state.x - state.x_prev)
            x_next = pnoise.corrupt(x_next, STREAM_X, t + 1)
            return FirstOrderState(x=x_next, x_prev=state.x)

        out = execute_round((state.x,), shards, agent, server, agent_states)
        return out.server_state, out.agent_states, out.finite

    def iterate(self, state):
        return state.x

    def internal_arrays(self, state, agent_states):
        return ()


class NAGSolver:
    """Momentum with the gradient taken at the extrapolated point; the
    extrapolated point is what goes out on the wire."""

    name = "nag"

    def __init__(self, alpha, beta):
        self.alpha = float(alpha)
        self.beta = float(beta)

    def init_state(self, shards, d, pnoise, seed):
        x = pnoise.corrupt(np.zeros(d), STREAM_X, 0)
        return FirstOrderState(x=x, x_prev=x.copy())

    def init_agent_states(self, shards):
        return None

    def step(self, state, shards, agent_states, pnoise, t):
        y = state.x + self.beta * (state.x - state.x_prev)

        def agent(bc, shard, ast):
            return (agent_gradient(shard, bc[0]),), ast

        def server(agg):
            x_next = y - self.alpha * agg[0]
            x_next = pnoise.corrupt(x_next, STREAM_X, t + 1)
            return FirstOrderState(x=x_next, x_prev=state.x)

        out = execute_round((y,), shards, agent, server, agent_states)
        return out.server_state, out.agent_states, out.finite

    def iterate(self, state):
        return state.x

    def internal_arrays(self, state, agent_states):
        return ()


# ---------------------------------------------------------------------------


@dataclass
class BFGSState:
    x: np.ndarray
    M: np.ndarray
    x_prev: np.ndarray = None
    g_prev: np.ndarray = None
    skipped: list = field(default_factory=list)


class BFGSSolver:
    """Server-side quasi-Newton on the aggregated gradient, unit step.

    The secant pair is the realized displacement of the (possibly
    corrupted) iterate sequence; when s.y <= 0 the update is skipped and
    the round index recorded.
    """

    name = "bfgs"

    def init_state(self, shards, d, pnoise, seed):
        x = pnoise.corrupt(np.zeros(d), STREAM_X, 0)
        M = pnoise.corrupt(np.eye(d), STREAM_M, 0)
        return BFGSState(x=x, M=M)

    def init_agent_states(self, shards):
        return None

    def step(self, state, shards, agent_states, pnoise, t):
        def agent(bc, shard, ast):
            return (agent_gradient(shard, bc[0]),), ast

        def server(agg):
            G = agg[0]
            M = state.M
            skipped = state.skipped
            if state.g_prev is not None:
                s = state.x - state.x_prev
                y = G - state.g_prev
                sy = float(s @ y)
                if sy > 0.0 and np.isfinite(sy):
                    M = kernels.bfgs_update(M, s, y, sy)
                else:
                    skipped = skipped + [t]
            M = pnoise.corrupt(M, STREAM_M, t + 1)
            x_next = state.x - M @ G
            x_next = pnoise.corrupt(x_next, STREAM_X, t + 1)
            return BFGSState(x=x_next, M=M, x_prev=state.x, g_prev=G, skipped=skipped)

        out = execute_round((state.x,), shards, agent, server, agent_states)
        return out.server_state, out.agent_states, out.finite

    def iterate(self, state):
        return state.x

    def internal_arrays(self, state, agent_states):
        return (state.M,)


# ---------------------------------------------------------------------------


@dataclass
class APCState:
    xbar: np.ndarray


class APCSolver:
    """Projection-based consensus with an over-relaxed server average.

    Pre-phase: each agent takes the least-norm solution of its own local
    system. Rounds keep every local iterate inside its agent's solution
    set (movement happens in the null space of A_i) while the server
    mixes the fresh average with its previous estimate.
    """

    name = "apc"

    def __init__(self, gamma, eta):
        self.gamma = float(gamma)
        self.eta = float(eta)

    def init_state(self, shards, d, pnoise, seed):
        self._d = d
        total = np.zeros(d)
        self._init_agent = []
        for sh in shards:
            pinv = np.linalg.pinv(sh.A)
            P = np.eye(d) - pinv @ sh.A
            x_i = pinv @ sh.b
            x_i = pnoise.corrupt(x_i, STREAM_AGENT_BASE + sh.agent_id, 0)
            self._init_agent.append((np.ascontiguousarray(x_i), np.ascontiguousarray(P)))
            total += x_i
        xbar = total / len(shards)
        xbar = pnoise.corrupt(xbar, STREAM_XBAR, 0)
        return APCState(xbar=xbar)

    def init_agent_states(self, shards):
        # consumed once; built during init_state so the pinv work happens once
        states = self._init_agent
        self._init_agent = None
        return states

    def step(self, state, shards, agent_states, pnoise, t):
        m = len(shards)
        gamma, eta = self.gamma, self.eta

        def agent(bc, shard, ast):
            x_i, P = ast
            x_new = kernels.apc_agent_update(P, x_i, bc[0], gamma)
            x_new = pnoise.corrupt(x_new, STREAM_AGENT_BASE + shard.agent_id, t + 1)
            x_new = np.ascontiguousarray(x_new)
            return (x_new,), (x_new, P)

        def server(agg):
            xhat = agg[0] / m
            xbar_next = eta * xhat + (1.0 - eta) * state.xbar
            return APCState(xbar=pnoise.corrupt(xbar_next, STREAM_XBAR, t + 1))

        out = execute_round((state.xbar,), shards, agent, server, agent_states)
        return out.server_state, out.agent_states, out.finite

    def iterate(self, state):
        return state.xbar

    def internal_arrays(self, state, agent_states):
        return tuple(ast[0] for ast in agent_states)


# ---------------------------------------------------------------------------


def make_solver(method, params):
    """Build a solver from its resolved parameter dict."""
    if method == "ipg":
        return IPGSolver(alpha=params["alpha"], delta=params["delta"],
                         freeze_k=params.get("freeze_k", False),
                         K0=params.get("K0"))
    if method == "gd":
        return GDSolver(alpha=params["alpha"])
    if method == "nag":
        return NAGSolver(alpha=params["alpha"], beta=params["beta"])
    if method == "hbm":
        return HBMSolver(alpha=params["alpha"], beta=params["beta"])
    if method == "apc":
        return APCSolver(gamma=params["gamma"], eta=params["eta_apc"])
    if method == "bfgs":
        return BFGSSolver()
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def run_rounds(solver, shards, d, n_rounds, pnoise=None, seed=0, collect=None):
    """Drive a solver for a fixed number of rounds; test helper.

    collect(state, t) may record whatever it wants; returns final state.
    """
    pnoise = pnoise or NoProcessNoise()
    state = solver.init_state(shards, d, pnoise, seed)
    agent_states = solver.init_agent_states(shards)
    if collect:
        collect(state, 0)
    for t in range(n_rounds):
        state, agent_states, _ = solver.step(state, shards, agent_states, pnoise, t)
        if collect:
            collect(state, t + 1)
    return state
