"""Per-follower MPC with a primal/dual double loop over V2V iteration rounds.

Each follower holds a scalar decision, the acceleration for the next control
step.  One iteration round consists of: all vehicles broadcast predicted
position/velocity forward, every follower computes its spacing terms from
what it received and sends them backward, then every follower takes one
damped Newton step on its local Lagrangian

    0.5*Q_alpha*z^2 + Q_beta*z'^2 + (tau^2/2)*u^2      (own spacing terms)
  + 0.5*Q_alpha*zx^2 + Q_beta*zv^2                      (successor's terms)
  + lam_front*g_front(u) + lam_rear*g_rear(u)           (safety multipliers)

where the successor's terms are the backward-received values shifted by the
vehicle's own candidate motion.  Everything is quadratic in u, so the Newton
step is exact and damping only guards degenerate input.

The primal phase stops once every follower's successive candidates differ by
at most ``primal_tol``; the dual phase then checks that all perceived gaps
clear the adaptive safety gap (tightened by ``dual_margin``), raising
multipliers on violated pairs by projected gradient ascent and decaying slack
ones.  A combined cap of ``max_iterations`` rounds per control step bounds
the loop whether or not the stop conditions were met.

Corrupted channel values flow through all of this untouched: a vehicle has no
way to tell a biased message from a truthful one, which is exactly the attack
surface under study.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .attack_engine import BiasMatrices
from .platoon_model import PlatoonState, SimConfig, VehicleState
from .v2v_channel import (
    PlatoonIterates,
    V2VChannel,
    backward_messages,
    forward_messages,
)


class NumericalError(RuntimeError):
    """Raised when the optimizer encounters non-finite quantities."""


@dataclass(frozen=True)
class IterationState:
    """One follower's iterate inside a control step."""

    u_ite: float
    v_ite: float
    x_ite: float
    zx_ite: float
    zv_ite: float
    iteration_index: int


@dataclass(frozen=True)
class DualState:
    """Non-negative multipliers, one per adjacent pair (pair i fronts follower i)."""

    multipliers: tuple[float, ...]
    dual_iteration: int = 0


@dataclass(frozen=True)
class PerceptionRecord:
    """What one follower saw on its channels at the end of a control step.

    front_x / front_v are the forward-channel values as received (biased if
    the predecessor's outgoing channels were under attack); gap_front and
    spacing_error are computed from them against the follower's own final
    prediction.  rear_spacing_error is the backward-channel value received
    from the successor, None for the last follower.
    """

    vehicle: int
    front_x: float
    front_v: float
    gap_front: float
    spacing_error: float
    rear_spacing_error: Optional[float]
    own_x_pred: float
    own_v_pred: float


@dataclass(frozen=True)
class ControlOutcome:
    """Result of one control step's optimization."""

    u_next: tuple[float, ...]
    iterations_used: int
    converged: bool
    perception: tuple[PerceptionRecord, ...] = ()


@dataclass(frozen=True)
class ConstraintViolation:
    vehicle: int
    kind: str  # "acceleration" | "velocity" | "safety_gap"
    value: float
    bound: float


def predict(state: VehicleState, u: float, tau: float) -> tuple[float, float]:
    """Next-step position and velocity; identical formula to the plant."""
    return (
        state.x + state.v * tau + u * tau * tau / 2.0,
        state.v + u * tau,
    )


def spacing_error(
    x_pred_prev: float, x_pred_self: float, v_pred_self: float, config: SimConfig
) -> float:
    """Deviation of the predicted gap from the adaptive nominal spacing."""
    return x_pred_prev - x_pred_self - (
        config.L_veh + config.p * config.tau * v_pred_self + config.delta
    )


def relative_speed(v_pred_prev: float, v_pred_self: float) -> float:
    return v_pred_prev - v_pred_self


def cost(
    z: Sequence[float], z_prime: Sequence[float], u: Sequence[float], config: SimConfig
) -> float:
    """Platoon-wide strictly convex objective."""
    if not (len(z) == len(z_prime) == len(u)):
        raise ValueError(
            f"length mismatch: z={len(z)} z_prime={len(z_prime)} u={len(u)}"
        )
    tau2 = config.tau * config.tau
    total = 0.0
    for zi, zpi, ui in zip(z, z_prime, u):
        total += (
            0.5 * config.Q_alpha * zi * zi
            + config.Q_beta * zpi * zpi
            + 0.5 * tau2 * ui * ui
        )
    return total


def primal_exit(u_deltas: Sequence[float], primal_tol: float) -> bool:
    """Primal stop: every follower's successive candidates differ by <= tol."""
    return max(abs(d) for d in u_deltas) <= primal_tol


def accel_box(v: float, config: SimConfig) -> tuple[float, float]:
    """Admissible acceleration interval combining the hard box with the
    velocity bounds on the predicted next step.

    The velocity-derived edges are pulled in by a hair so the predicted
    velocity stays inside [v_min, v_max] after floating-point rounding.
    """
    guard = 1e-9
    lo = max(config.a_min, (config.v_min - v) / config.tau + guard)
    hi = min(config.a_max, (config.v_max - v) / config.tau - guard)
    if lo > hi:  # degenerate box from an out-of-bounds velocity; stay put
        mid = min(max((lo + hi) / 2.0, config.a_min), config.a_max)
        return mid, mid
    return lo, hi


@dataclass(frozen=True)
class _LocalProblem:
    """Coefficients of one follower's scalar Lagrangian for a single round."""

    measured: VehicleState
    front_x: float
    front_v: float
    rear_zx: Optional[float]
    rear_zv: Optional[float]
    broadcast_x: float
    broadcast_v: float
    lam_front: float
    lam_rear: float
    config: SimConfig

    def lagrangian(self, u: float) -> float:
        cfg = self.config
        tau = cfg.tau
        px = self.measured.x + self.measured.v * tau + u * tau * tau / 2.0
        pv = self.measured.v + u * tau
        z = self.front_x - px - (cfg.L_veh + cfg.p * tau * pv + cfg.delta)
        zp = self.front_v - pv
        value = (
            0.5 * cfg.Q_alpha * z * z
            + cfg.Q_beta * zp * zp
            + 0.5 * tau * tau * u * u
        )
        g_front = (cfg.L_veh + cfg.p * tau * pv + cfg.dual_margin) - (self.front_x - px)
        value += self.lam_front * g_front
        if self.rear_zx is not None:
            rzx = self.rear_zx + (px - self.broadcast_x)
            rzv = self.rear_zv + (pv - self.broadcast_v)
            value += 0.5 * cfg.Q_alpha * rzx * rzx + cfg.Q_beta * rzv * rzv
            g_rear = -(rzx + cfg.delta) + cfg.dual_margin
            value += self.lam_rear * g_rear
        return value

    def gradient_hessian(self, u: float) -> tuple[float, float]:
        cfg = self.config
        tau = cfg.tau
        dpx = tau * tau / 2.0
        dpv = tau
        dz = -dpx - cfg.p * tau * dpv
        dzp = -dpv
        px = self.measured.x + self.measured.v * tau + u * dpx
        pv = self.measured.v + u * dpv
        z = self.front_x - px - (cfg.L_veh + cfg.p * tau * pv + cfg.delta)
        zp = self.front_v - pv
        grad = (
            cfg.Q_alpha * z * dz
            + 2.0 * cfg.Q_beta * zp * dzp
            + tau * tau * u
            + self.lam_front * (-dz)
        )
        hess = cfg.Q_alpha * dz * dz + 2.0 * cfg.Q_beta * dzp * dzp + tau * tau
        if self.rear_zx is not None:
            rzx = self.rear_zx + (px - self.broadcast_x)
            rzv = self.rear_zv + (pv - self.broadcast_v)
            grad += (
                cfg.Q_alpha * rzx * dpx
                + 2.0 * cfg.Q_beta * rzv * dpv
                + self.lam_rear * (-dpx)
            )
            hess += cfg.Q_alpha * dpx * dpx + 2.0 * cfg.Q_beta * dpv * dpv
        return grad, hess


def primal_step(
    measured: VehicleState,
    iter_state: IterationState,
    front_x: float,
    front_v: float,
    rear_zx: Optional[float],
    rear_zv: Optional[float],
    lam_front: float,
    lam_rear: float,
    config: SimConfig,
) -> IterationState:
    """One damped, box-clipped Newton update of a follower's candidate.

    The backtracking halving (at most 20) keeps the local Lagrangian
    non-increasing; for the exact quadratic the full step is always accepted.
    Raises NumericalError on non-finite gradient or Hessian.
    """
    problem = _LocalProblem(
        measured=measured,
        front_x=front_x,
        front_v=front_v,
        rear_zx=rear_zx,
        rear_zv=rear_zv,
        broadcast_x=iter_state.x_ite,
        broadcast_v=iter_state.v_ite,
        lam_front=lam_front,
        lam_rear=lam_rear,
        config=config,
    )
    u_cur = iter_state.u_ite
    grad, hess = problem.gradient_hessian(u_cur)
    if not (math.isfinite(grad) and math.isfinite(hess)) or hess <= 0.0:
        raise NumericalError(
            f"degenerate Newton data at iteration {iter_state.iteration_index}: "
            f"grad={grad} hess={hess} u={u_cur} front=({front_x}, {front_v})"
        )
    full_step = -grad / hess
    lo, hi = accel_box(measured.v, config)
    phi0 = problem.lagrangian(u_cur)
    u_new = u_cur
    alpha = 1.0
    for _ in range(21):
        candidate = min(max(u_cur + alpha * full_step, lo), hi)
        if problem.lagrangian(candidate) <= phi0 + 1e-12 * (1.0 + abs(phi0)):
            u_new = candidate
            break
        alpha /= 2.0
    px, pv = predict(measured, u_new, config.tau)
    return IterationState(
        u_ite=u_new,
        v_ite=pv,
        x_ite=px,
        zx_ite=spacing_error(front_x, px, pv, config),
        zv_ite=relative_speed(front_v, pv),
        iteration_index=iter_state.iteration_index + 1,
    )


def dual_update(
    dual: DualState,
    predicted_gaps: Sequence[float],
    safety_gaps: Sequence[float],
    config: SimConfig,
) -> DualState:
    """Projected gradient ascent on the safety-gap multipliers.

    Violated pairs (gap below the tightened safety gap) get their multiplier
    raised proportionally to the violation; slack pairs decay toward zero.
    Multipliers never go negative.
    """
    updated = []
    for lam, gap, safety in zip(dual.multipliers, predicted_gaps, safety_gaps):
        violation = safety - gap
        if violation > 0.0:
            lam = lam + config.dual_step * violation
        else:
            lam = lam * config.dual_decay
        updated.append(max(lam, 0.0))
    return DualState(multipliers=tuple(updated), dual_iteration=dual.dual_iteration + 1)


def run_control_step(
    platoon: PlatoonState,
    channel: V2VChannel | BiasMatrices,
    config: SimConfig,
    leader_u: float = 0.0,
    warm_start: Optional[Sequence[float]] = None,
) -> ControlOutcome:
    """Execute the full double loop for one control step.

    Every iteration round exchanges messages through ``channel`` (where the
    attack bias is injected), then updates all followers in a synchronized
    Jacobi sweep.  The returned accelerations are for the next control step;
    the platoon's currently applied accelerations are untouched during the
    loop.  Deterministic: identical inputs produce bit-identical outcomes.
    """
    if isinstance(channel, BiasMatrices):
        channel = V2VChannel(bias=channel)
    cfg = config
    n = platoon.n
    tau = cfg.tau
    k = platoon.control_step

    leader_x, leader_v = predict(platoon.leader, leader_u, tau)
    if warm_start is None:
        u = [0.0] * n
    else:
        if len(warm_start) != n:
            raise ValueError(f"warm_start needs {n} entries, got {len(warm_start)}")
        u = list(warm_start)
    for i in range(n):
        lo, hi = accel_box(platoon.followers[i].v, cfg)
        u[i] = min(max(u[i], lo), hi)

    px = [0.0] * n
    pv = [0.0] * n
    for i in range(n):
        px[i], pv[i] = predict(platoon.followers[i], u[i], tau)

    # Last received channel values per follower (index 0 = fv1).  Fallbacks
    # cover a message dropped before anything was ever received: the benign
    # expectation for forward values, a zero spacing report for backward.
    last_fx: list[Optional[float]] = [None] * n
    last_fv: list[Optional[float]] = [None] * n
    last_rzx: list[Optional[float]] = [None] * n
    last_rzv: list[Optional[float]] = [None] * n

    dual = DualState(multipliers=(0.0,) * n)
    iterations_used = 0
    converged = False

    for t in range(cfg.max_iterations):
        iterates = PlatoonIterates(
            x_ite=(leader_x, *px),
            v_ite=(leader_v, *pv),
            zx_ite=(0.0, *(0.0,) * n),  # placeholders; backward built below
            zv_ite=(0.0, *(0.0,) * n),
        )
        for msg in forward_messages(iterates, t):
            i = msg.receiver - 1
            sent = channel.corrupt(msg, k)
            if sent is None:
                if last_fx[i] is None:
                    last_fx[i] = px[i] + cfg.nominal_gap(pv[i])
                    last_fv[i] = pv[i]
            else:
                last_fx[i] = sent.x_ite
                last_fv[i] = sent.v_ite
        fx = [v for v in last_fx]
        fv = [v for v in last_fv]

        z_own = [spacing_error(fx[i], px[i], pv[i], cfg) for i in range(n)]
        zp_own = [relative_speed(fv[i], pv[i]) for i in range(n)]
        iterates = PlatoonIterates(
            x_ite=(leader_x, *px),
            v_ite=(leader_v, *pv),
            zx_ite=(0.0, *z_own),
            zv_ite=(0.0, *zp_own),
        )
        for msg in backward_messages(iterates, t):
            i = msg.receiver - 1
            sent = channel.corrupt(msg, k)
            if sent is None:
                if last_rzx[i] is None:
                    last_rzx[i] = 0.0
                    last_rzv[i] = 0.0
            else:
                last_rzx[i] = sent.zx_ite
                last_rzv[i] = sent.zv_ite

        deltas = [0.0] * n
        new_states = []
        for i in range(n):
            state = IterationState(
                u_ite=u[i],
                v_ite=pv[i],
                x_ite=px[i],
                zx_ite=z_own[i],
                zv_ite=zp_own[i],
                iteration_index=t,
            )
            has_rear = i < n - 1
            try:
                updated = primal_step(
                    platoon.followers[i],
                    state,
                    fx[i],
                    fv[i],
                    last_rzx[i] if has_rear else None,
                    last_rzv[i] if has_rear else None,
                    dual.multipliers[i],
                    dual.multipliers[i + 1] if has_rear else 0.0,
                    cfg,
                )
            except NumericalError as exc:
                raise NumericalError(f"follower {i + 1}, control step {k}: {exc}") from exc
            deltas[i] = updated.u_ite - u[i]
            new_states.append(updated)
        for i, updated in enumerate(new_states):
            u[i] = updated.u_ite
            px[i] = updated.x_ite
            pv[i] = updated.v_ite
        iterations_used = t + 1

        if primal_exit(deltas, cfg.primal_tol):
            gaps = [fx[i] - px[i] for i in range(n)]
            safeties = [cfg.safety_gap(pv[i]) + cfg.dual_margin for i in range(n)]
            if all(gap >= safety for gap, safety in zip(gaps, safeties)):
                converged = True
                break
            dual = dual_update(dual, gaps, safeties, cfg)

    perception = tuple(
        PerceptionRecord(
            vehicle=i + 1,
            front_x=fx[i],
            front_v=fv[i],
            gap_front=fx[i] - px[i],
            spacing_error=spacing_error(fx[i], px[i], pv[i], cfg),
            rear_spacing_error=last_rzx[i] if i < n - 1 else None,
            own_x_pred=px[i],
            own_v_pred=pv[i],
        )
        for i in range(n)
    )
    return ControlOutcome(
        u_next=tuple(u),
        iterations_used=iterations_used,
        converged=converged,
        perception=perception,
    )


def check_constraints(
    u: Sequence[float],
    platoon: PlatoonState,
    config: SimConfig,
    leader_u: float = 0.0,
) -> list[ConstraintViolation]:
    """Evaluate the acceleration, velocity and safety-gap constraints on the
    true next state reached from ``platoon`` under the given accelerations.
    """
    if len(u) != platoon.n:
        raise ValueError(f"expected {platoon.n} accelerations, got {len(u)}")
    violations = []
    prev_x, _ = predict(platoon.leader, leader_u, config.tau)
    for i, (ui, state) in enumerate(zip(u, platoon.followers), start=1):
        if not config.a_min <= ui <= config.a_max:
            violations.append(
                ConstraintViolation(i, "acceleration", ui, config.a_max if ui > config.a_max else config.a_min)
            )
        x_next, v_next = predict(state, ui, config.tau)
        if not config.v_min <= v_next <= config.v_max:
            violations.append(
                ConstraintViolation(i, "velocity", v_next, config.v_max if v_next > config.v_max else config.v_min)
            )
        safety = config.safety_gap(v_next)
        gap = prev_x - x_next
        if gap < safety:
            violations.append(ConstraintViolation(i, "safety_gap", gap, safety))
        prev_x = x_next
    return violations
