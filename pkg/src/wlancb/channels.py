"""Channelization arithmetic and channel-bonding policies.

Basic (20 MHz) channels are numbered 1..8. A transmission uses a contiguous
block of 1, 2, 4 or 8 basic channels aligned on the binary channelization
tree anchored at channel 1, e.g. {1,2}, {3,4}, {1..4}, {5..8}, {1..8}.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable

from .errors import PrimaryBusy

NUM_CHANNELS = 8
VALID_WIDTHS = (1, 2, 4, 8)


@dataclass(frozen=True, order=True)
class ChannelRange:
    """Inclusive block ``left..right`` of basic channels."""

    left: int
    right: int

    def __post_init__(self):
        width = self.right - self.left + 1
        if width not in VALID_WIDTHS:
            raise ValueError(f"invalid channel block width {width} ({self.left}..{self.right})")
        if (self.left - 1) % width != 0:
            raise ValueError(f"channel block {self.left}..{self.right} is not aligned")
        if not 1 <= self.left <= self.right <= NUM_CHANNELS:
            raise ValueError(f"channel block {self.left}..{self.right} outside 1..{NUM_CHANNELS}")

    @property
    def width(self) -> int:
        return self.right - self.left + 1

    @property
    def mhz(self) -> int:
        return 20 * self.width

    @property
    def channels(self) -> range:
        return range(self.left, self.right + 1)

    def __contains__(self, channel: int) -> bool:
        return self.left <= channel <= self.right

    def issubset(self, channels: Iterable[int]) -> bool:
        pool = set(channels)
        return all(c in pool for c in self.channels)

    def overlaps(self, other: "ChannelRange") -> bool:
        return self.left <= other.right and other.left <= self.right

    def distance_to(self, channel: int) -> int:
        """Channel-index gap from ``channel`` to the nearest edge of the block (0 inside)."""
        if channel < self.left:
            return self.left - channel
        if channel > self.right:
            return channel - self.right
        return 0

    def __str__(self):
        return f"{self.left}" if self.width == 1 else f"{self.left}-{self.right}"

    @classmethod
    def parse(cls, text: str) -> "ChannelRange":
        left, _, right = str(text).partition("-")
        return cls(int(left), int(right or left))


def block_containing(channel: int, width: int) -> ChannelRange:
    """The aligned block of ``width`` basic channels that contains ``channel``."""
    left = ((channel - 1) // width) * width + 1
    return ChannelRange(left, left + width - 1)


class Policy(str, enum.Enum):
    OP = "OP"  # only primary
    SCB = "SCB"  # static bonding: whole allocation or nothing
    AM = "AM"  # always-max
    PU = "PU"  # probabilistic uniform

    def __str__(self):
        return self.value

    @classmethod
    def parse(cls, text) -> "Policy":
        try:
            return cls(str(text).strip().upper())
        except ValueError:
            raise ValueError(f"unknown policy {text!r}; expected one of OP, SCB, AM, PU") from None


@dataclass(frozen=True)
class ChannelAllocation:
    allocated: ChannelRange
    primary: int

    def __post_init__(self):
        if self.primary not in self.allocated:
            raise ValueError(f"primary {self.primary} outside allocation {self.allocated}")


def candidate_blocks(alloc: ChannelAllocation) -> list[ChannelRange]:
    """Aligned blocks that contain the primary and fit in the allocation, narrowest first."""
    return [block_containing(alloc.primary, w) for w in VALID_WIDTHS if w <= alloc.allocated.width]


def _feasible_blocks(alloc: ChannelAllocation, idle) -> list[ChannelRange]:
    if alloc.primary not in idle:
        raise PrimaryBusy(f"primary channel {alloc.primary} is busy")
    return [b for b in candidate_blocks(alloc) if b.issubset(idle)]


def select_channel(policy: Policy, alloc: ChannelAllocation, idle, draw: float = 0.0):
    """Transmission block chosen on backoff expiry, or ``None`` when the policy
    forbids transmitting (SCB with part of its allocation busy).

    ``draw`` in [0, 1) indexes the uniform choice of PU; the other policies
    ignore it.
    """
    feasible = _feasible_blocks(alloc, idle)
    if policy is Policy.OP:
        return feasible[0]
    if policy is Policy.SCB:
        return alloc.allocated if feasible[-1] == alloc.allocated else None
    if policy is Policy.AM:
        return feasible[-1]
    if policy is Policy.PU:
        k = len(feasible)
        return feasible[min(int(math.floor(draw * k)), k - 1)]
    raise ValueError(f"unknown policy {policy!r}")


def feasible_transitions(policy: Policy, alloc: ChannelAllocation, idle) -> list[tuple[ChannelRange, float]]:
    """All outcomes of :func:`select_channel` with their probabilities."""
    if policy is Policy.PU:
        feasible = _feasible_blocks(alloc, idle)
        return [(b, 1.0 / len(feasible)) for b in feasible]
    choice = select_channel(policy, alloc, idle)
    return [] if choice is None else [(choice, 1.0)]
