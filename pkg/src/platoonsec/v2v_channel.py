"""Iterative V2V message exchange and the bias injection point.

During every iteration of a control step, each vehicle (leader included)
broadcasts its predicted position and velocity forward to its immediate
follower, then every follower except the first sends its computed relative
position/velocity terms backward to its predecessor.  The leader never
receives backward traffic, and the leader-to-first-follower link is trusted:
leader-sent messages are never corrupted.

All functions here are stateless transformations; the exchange schedule is
owned by the control loop.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:  # pragma: no cover
    from .attack_engine import BiasMatrices


class ChannelId(str, Enum):
    """The four corruptible iteration channels."""

    X_ITE = "x_ite"
    V_ITE = "v_ite"
    ZX_ITE = "zx_ite"
    ZV_ITE = "zv_ite"


class Direction(str, Enum):
    FORWARD = "forward"    # predecessor -> follower, carries x_ite / v_ite
    BACKWARD = "backward"  # follower -> predecessor, carries zx_ite / zv_ite


@dataclass(frozen=True)
class IterationMessage:
    """One V2V payload inside an iteration round.

    Vehicle index 0 is the leader; followers are 1..n.  Forward messages
    carry only x_ite/v_ite, backward messages only zx_ite/zv_ite; the unused
    fields are None.
    """

    sender: int
    receiver: int
    iteration_index: int
    direction: Direction
    x_ite: Optional[float] = None
    v_ite: Optional[float] = None
    zx_ite: Optional[float] = None
    zv_ite: Optional[float] = None


@dataclass(frozen=True)
class PlatoonIterates:
    """Per-vehicle iterate snapshot used to assemble one exchange round.

    Indexing: position/velocity tuples cover vehicles 0..n (0 = leader);
    the relative-term tuples cover followers 1..n at indices 1..n with
    index 0 unused.
    """

    x_ite: tuple[float, ...]
    v_ite: tuple[float, ...]
    zx_ite: tuple[float, ...]
    zv_ite: tuple[float, ...]


def forward_messages(iterates: PlatoonIterates, iteration_index: int) -> list[IterationMessage]:
    """Forward broadcasts, leader first: 0->1, 1->2, ..., n-1->n."""
    n = len(iterates.x_ite) - 1
    return [
        IterationMessage(
            sender=s,
            receiver=s + 1,
            iteration_index=iteration_index,
            direction=Direction.FORWARD,
            x_ite=iterates.x_ite[s],
            v_ite=iterates.v_ite[s],
        )
        for s in range(n)
    ]


def backward_messages(iterates: PlatoonIterates, iteration_index: int) -> list[IterationMessage]:
    """Backward sends 2->1, ..., n->n-1.  fv1 sends nothing to the leader."""
    n = len(iterates.x_ite) - 1
    return [
        IterationMessage(
            sender=s,
            receiver=s - 1,
            iteration_index=iteration_index,
            direction=Direction.BACKWARD,
            zx_ite=iterates.zx_ite[s],
            zv_ite=iterates.zv_ite[s],
        )
        for s in range(2, n + 1)
    ]


def exchange(iterates: PlatoonIterates, iteration_index: int) -> list[IterationMessage]:
    """All messages of one iteration round in deterministic order.

    For n followers this is n forward messages followed by n-1 backward
    messages (n=6 gives 11 per round).
    """
    return forward_messages(iterates, iteration_index) + backward_messages(
        iterates, iteration_index
    )


def apply_bias(msg: IterationMessage, bias: "BiasMatrices") -> IterationMessage:
    """Add the sender's per-channel bias for this iteration row.

    Leader-sent messages pass through untouched (the leader link is trusted).
    Bias matrix column j holds the corruption of follower j+1's outgoing
    channels.  Additive and composable: applying B1 then B2 equals B1+B2.
    """
    if msg.sender == 0:
        return msg
    col = msg.sender - 1
    row = msg.iteration_index
    if msg.direction is Direction.FORWARD:
        return replace(
            msg,
            x_ite=msg.x_ite + float(bias.x_ite_bias[row, col]),
            v_ite=msg.v_ite + float(bias.v_ite_bias[row, col]),
        )
    return replace(
        msg,
        zx_ite=msg.zx_ite + float(bias.zx_ite_bias[row, col]),
        zv_ite=msg.zv_ite + float(bias.zv_ite_bias[row, col]),
    )


@dataclass(frozen=True)
class DropRule:
    """Suppress delivery of matching messages (jamming-style corruption).

    A dropped message makes the receiver reuse its last received value.
    ``control_steps`` and ``iterations`` are closed [start, end] intervals;
    None means "any".
    """

    direction: Direction
    sender: int
    control_steps: Optional[tuple[int, int]] = None
    iterations: Optional[tuple[int, int]] = None

    def matches(self, msg: IterationMessage, control_step: int) -> bool:
        if msg.direction is not self.direction or msg.sender != self.sender:
            return False
        if self.control_steps is not None:
            lo, hi = self.control_steps
            if not lo <= control_step <= hi:
                return False
        if self.iterations is not None:
            lo, hi = self.iterations
            if not lo <= msg.iteration_index <= hi:
                return False
        return True


@dataclass(frozen=True)
class V2VChannel:
    """The corruption point every message passes through.

    ``corrupt`` returns the (possibly biased) message, or None when a drop
    rule suppresses it.
    """

    bias: "BiasMatrices"
    drops: tuple[DropRule, ...] = ()

    def corrupt(self, msg: IterationMessage, control_step: int) -> Optional[IterationMessage]:
        for rule in self.drops:
            if rule.matches(msg, control_step):
                return None
        return apply_bias(msg, self.bias)
