"""Propagation, interference, MCS selection and IEEE 802.11ax airtimes.

Widths are given as a count of basic channels (1, 2, 4, 8 for 20..160 MHz).
Powers are in dBm / dB, durations in microseconds, lengths in bits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from fractions import Fraction
from typing import Iterable, NamedTuple, Sequence

from .channels import VALID_WIDTHS, ChannelRange
from .errors import InvalidAggregation, InvalidWidth, NonPositiveDistance, ParseError

POWER_FLOOR_DBM = -300.0

# data subcarriers per width (single user, one spatial stream)
DATA_SUBCARRIERS = {1: 234, 2: 468, 4: 980, 8: 1960}
SPATIAL_STREAMS = 1
LEGACY_BITS_PER_SYMBOL = 24


@dataclass(frozen=True)
class RadioEnvironment:
    tx_power: float = 15.0  # dBm
    tx_gain: float = 0.0  # dB
    rx_gain: float = 0.0  # dB
    cca: float = -82.0  # dBm
    capture_effect: float = 20.0  # dB
    noise: float = -95.0  # dBm
    leakage: float = -20.0  # dB per channel of separation
    breakpoint: float = 9.0  # m
    packet_error_rate: float = 0.1

    def __post_init__(self):
        if self.capture_effect <= 0:
            raise ValueError("capture effect threshold must be > 0 dB")
        if self.leakage >= 0:
            raise ValueError("adjacent leakage factor must be < 0 dB")
        if self.breakpoint <= 0:
            raise ValueError("path-loss breakpoint must be > 0 m")
        if not 0.0 <= self.packet_error_rate <= 1.0:
            raise ValueError("packet error rate must lie in [0, 1]")


@dataclass(frozen=True)
class MacTimingConstants:
    """Defaults reproduce the IEEE 802.11ax evaluation setup."""

    t_empty: int = 9
    t_sifs: int = 16
    t_difs: int = 34
    t_pifs: int = 25
    t_phy_legacy: int = 20
    t_phy_he_su: int = 164
    symbol_legacy: int = 4
    symbol: int = 16
    l_data: int = 12000
    l_back: int = 432
    l_rts: int = 160
    l_cts: int = 112
    l_service: int = 16
    l_delimiter: int = 32
    l_mac_header: int = 320
    l_tail: int = 18
    max_aggregation: int = 64
    buffer_size: int = 150
    cw_min: int = 16
    backoff_stages: int = 5

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"timing constant {f.name} must be strictly positive")

    @property
    def mean_backoff_slots(self) -> float:
        return (self.cw_min - 1) / 2


@dataclass(frozen=True)
class McsEntry:
    index: int
    modulation_bits: int
    coding_rate: Fraction
    sensitivity: tuple  # dBm at 20, 40, 80, 160 MHz

    def sensitivity_at(self, width: int) -> float:
        return self.sensitivity[_width_slot(width)]


_MODULATION = [(1, "1/2"), (2, "1/2"), (2, "3/4"), (4, "1/2"), (4, "3/4"), (6, "2/3"),
               (6, "3/4"), (6, "5/6"), (8, "3/4"), (8, "5/6"), (10, "3/4"), (10, "5/6")]
_SENSITIVITY_20MHZ = [-82, -79, -77, -74, -70, -66, -65, -64, -59, -57, -54, -52]

DEFAULT_MCS_TABLE: tuple[McsEntry, ...] = tuple(
    McsEntry(i, bits, Fraction(rate), tuple(float(s + 3 * k) for k in range(4)))
    for i, ((bits, rate), s) in enumerate(zip(_MODULATION, _SENSITIVITY_20MHZ))
)


def _width_slot(width: int) -> int:
    try:
        return VALID_WIDTHS.index(width)
    except ValueError:
        raise InvalidWidth(f"width must be one of {VALID_WIDTHS} basic channels, got {width}") from None


def load_mcs_table(path) -> tuple[McsEntry, ...]:
    """Read a whitespace-separated MCS table.

    One row per MCS: ``index modulation_bits coding_rate s20 s40 s80 s160``
    where ``coding_rate`` is a fraction such as ``5/6``. ``#`` starts a comment.
    """
    entries = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 7:
                raise ParseError(f"expected 7 columns, found {len(parts)}", line=lineno)
            try:
                entry = McsEntry(int(parts[0]), int(parts[1]), Fraction(parts[2]),
                                 tuple(float(p) for p in parts[3:]))
            except (ValueError, ZeroDivisionError) as exc:
                raise ParseError(f"malformed MCS row: {exc}", line=lineno) from None
            entries.append(entry)
    return validate_mcs_table(entries)


def validate_mcs_table(entries: Iterable[McsEntry]) -> tuple[McsEntry, ...]:
    table = tuple(sorted(entries, key=lambda e: e.index))
    if not table:
        raise ParseError("empty MCS table")
    if [e.index for e in table] != list(range(len(table))):
        raise ParseError("MCS indices must be 0..n-1 without gaps")
    for prev, cur in zip(table, table[1:]):
        if cur.modulation_bits * cur.coding_rate < prev.modulation_bits * prev.coding_rate:
            raise ParseError(f"MCS {cur.index} rate decreases")
        if any(b <= a for a, b in zip(prev.sensitivity, cur.sensitivity)):
            raise ParseError(f"MCS {cur.index} sensitivity not increasing")
    for e in table:
        if any(b <= a for a, b in zip(e.sensitivity, e.sensitivity[1:])):
            raise ParseError(f"MCS {e.index} sensitivity not increasing with width")
    return table


def format_mcs_table(table: Sequence[McsEntry]) -> str:
    lines = ["# index bits rate s20 s40 s80 s160"]
    for e in table:
        sens = " ".join(f"{s:g}" for s in e.sensitivity)
        lines.append(f"{e.index} {e.modulation_bits} {e.coding_rate} {sens}")
    return "\n".join(lines) + "\n"


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) if dbm > POWER_FLOOR_DBM else 0.0


def mw_to_dbm(mw: float) -> float:
    if mw <= 0.0:
        return POWER_FLOOR_DBM
    return max(10.0 * math.log10(mw), POWER_FLOOR_DBM)


def distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def path_loss(d: float, breakpoint: float = 9.0) -> float:
    """Dual-slope log-distance loss (5.25 GHz indoor, room-corridor), in dB."""
    if d <= 0:
        raise NonPositiveDistance(f"distance must be positive, got {d}")
    if d <= breakpoint:
        return 53.2 + 25.8 * math.log10(d)
    return 56.4 + 29.1 * math.log10(d)


def received_power(env: RadioEnvironment, tx, rx) -> float:
    """Total received power in dBm between two positions."""
    return env.tx_power + env.tx_gain + env.rx_gain - path_loss(distance(tx, rx), env.breakpoint)


def per_channel_tx_power(tx_power: float, width: int) -> float:
    _width_slot(width)
    return tx_power - 10.0 * math.log10(width)


def leakage_db(env: RadioEnvironment, block: ChannelRange, channel: int) -> float:
    """Attenuation applied to a block's per-channel power as seen on ``channel``."""
    return env.leakage * block.distance_to(channel)


def sensed_power_on_channel(env: RadioEnvironment, listener, active, channel: int) -> float:
    """Power in dBm sensed at ``listener`` on one basic channel.

    ``active`` holds ``(tx_position, ChannelRange, per_channel_power_dbm)``.
    """
    total = 0.0
    for tx, block, power in active:
        rx = power + env.tx_gain + env.rx_gain - path_loss(distance(tx, listener), env.breakpoint)
        total += dbm_to_mw(rx + leakage_db(env, block, channel))
    return mw_to_dbm(total)


def sinr(env: RadioEnvironment, signal: float, interference: float) -> float:
    """SINR in dB of ``signal`` (dBm) against interference (dBm) plus background noise."""
    return signal - mw_to_dbm(dbm_to_mw(interference) + dbm_to_mw(env.noise))


def select_mcs(rx_power: float, width: int, table: Sequence[McsEntry] = DEFAULT_MCS_TABLE):
    """Highest MCS whose sensitivity at ``width`` is met, or ``None`` (no link)."""
    best = None
    for entry in table:
        if entry.sensitivity_at(width) <= rx_power:
            best = entry
    return best


def bits_per_symbol(width: int, mcs: McsEntry) -> Fraction:
    """Data bits carried per OFDM symbol (exact; 80/160 MHz rates are fractional)."""
    _width_slot(width)
    return DATA_SUBCARRIERS[width] * mcs.modulation_bits * mcs.coding_rate * SPATIAL_STREAMS


def raw_rate(width: int, mcs: McsEntry, timing: MacTimingConstants = MacTimingConstants()) -> float:
    """PHY data rate in bits/s."""
    return float(bits_per_symbol(width, mcs)) / (timing.symbol * 1e-6)


class FrameDurations(NamedTuple):
    rts: int
    cts: int
    data: int
    back: int


def _legacy_duration(timing: MacTimingConstants, payload_bits: int) -> int:
    symbols = -(-(timing.l_service + payload_bits + timing.l_tail) // LEGACY_BITS_PER_SYMBOL)
    return timing.t_phy_legacy + symbols * timing.symbol_legacy


def data_duration(timing: MacTimingConstants, width: int, mcs: McsEntry, n_agg: int) -> int:
    if not 1 <= n_agg <= timing.max_aggregation:
        raise InvalidAggregation(f"aggregation must lie in [1, {timing.max_aggregation}], got {n_agg}")
    bits = (timing.l_service + n_agg * (timing.l_delimiter + timing.l_mac_header + timing.l_data)
            + timing.l_tail)
    symbols = math.ceil(Fraction(bits) / bits_per_symbol(width, mcs))
    return timing.t_phy_he_su + symbols * timing.symbol


def frame_durations(timing: MacTimingConstants, width: int, mcs: McsEntry, n_agg: int) -> FrameDurations:
    """RTS, CTS, DATA and BACK durations (us). Control frames use the legacy basic rate."""
    return FrameDurations(
        rts=_legacy_duration(timing, timing.l_rts),
        cts=_legacy_duration(timing, timing.l_cts),
        data=data_duration(timing, width, mcs, n_agg),
        back=_legacy_duration(timing, timing.l_back),
    )


def t_successful(timing: MacTimingConstants, width: int, mcs: McsEntry, n_agg: int) -> int:
    """Duration of a successful RTS/CTS/DATA/BACK exchange including DIFS and one empty slot."""
    d = frame_durations(timing, width, mcs, n_agg)
    return d.rts + 3 * timing.t_sifs + d.cts + d.data + d.back + timing.t_difs + timing.t_empty


def effective_rate(timing: MacTimingConstants, width: int, mcs: McsEntry, n_agg: int | None = None) -> float:
    """Payload bits/s of back-to-back successful exchanges of ``n_agg`` packets."""
    n = timing.max_aggregation if n_agg is None else n_agg
    return n * timing.l_data / (t_successful(timing, width, mcs, n) * 1e-6)
