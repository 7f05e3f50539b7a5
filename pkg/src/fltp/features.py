"""Sliding-window feature/label construction from received message streams.

A feature window is a (10, 9) float array; each row describes one received
message relative to the receiving (ego) vehicle:

    [loc_x, loc_y, spd_x, spd_y, dis_chg_x, dis_chg_y,
     spd_chg_x, spd_chg_y, rssi]

loc      claimed position / R, clamped to [0, 1]
spd      claimed speed / v_max, clamped to [-1, 1]
dis_chg  (claimed position - ego position) / R, clamped to [-1, 1]
spd_chg  (claimed speed - ego speed) / v_max, clamped to [-1, 1]
rssi     affine [rssi_min, rssi_max] dBm -> [0, 1], clamped

The label block is a (5, 3) float array: the sender's ground-truth positions
for the next five steps normalized by R, with the attacker-class code
replicated in the third column.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .trace import AttackerType, Bsm, VehicleState

WINDOW_INPUT_STEPS = 10
WINDOW_LABEL_STEPS = 5
WINDOW_SPAN = WINDOW_INPUT_STEPS + WINDOW_LABEL_STEPS
FEATURE_DIM = 9
LABEL_DIM = 3


class WindowError(Exception):
    """A gap in the message step sequence; the caller should restart the
    window after the gap."""


@dataclass
class NormalizationSpec:
    region_side: float
    v_max: float
    rssi_min: float = -100.0
    rssi_max: float = -40.0

    def validate(self) -> None:
        if self.region_side <= 0:
            raise ValueError(f"region_side must be > 0, got {self.region_side}")
        if self.v_max <= 0:
            raise ValueError(f"v_max must be > 0, got {self.v_max}")
        if self.rssi_min >= self.rssi_max:
            raise ValueError(f"rssi_min must be < rssi_max, got [{self.rssi_min}, {self.rssi_max}]")


def build_feature_window(
    msgs: Sequence[Bsm], ego_states: Sequence[VehicleState], spec: NormalizationSpec
) -> np.ndarray:
    """Normalize ten consecutive messages from one sender into a (10, 9) window.

    Raises WindowError on a gap in the message step sequence, ValueError for
    mixed senders, wrong lengths, or misaligned ego states.
    """
    spec.validate()
    if len(msgs) != WINDOW_INPUT_STEPS or len(ego_states) != WINDOW_INPUT_STEPS:
        raise ValueError(
            f"need exactly {WINDOW_INPUT_STEPS} messages and ego states, "
            f"got {len(msgs)} and {len(ego_states)}"
        )
    sender = msgs[0].sender_id
    if any(m.sender_id != sender for m in msgs):
        raise ValueError("window mixes messages from different senders")
    for prev, cur in zip(msgs, msgs[1:]):
        if cur.step != prev.step + 1:
            raise WindowError(f"step gap between {prev.step} and {cur.step}")
    if any(e.t != m.step for e, m in zip(ego_states, msgs)):
        raise ValueError("ego states misaligned with message steps")

    r = spec.region_side
    v = spec.v_max
    rssi_span = spec.rssi_max - spec.rssi_min
    out = np.empty((WINDOW_INPUT_STEPS, FEATURE_DIM))
    for k, (m, ego) in enumerate(zip(msgs, ego_states)):
        out[k, 0] = min(max(m.claimed_pos_x / r, 0.0), 1.0)
        out[k, 1] = min(max(m.claimed_pos_y / r, 0.0), 1.0)
        out[k, 2] = min(max(m.claimed_spd_x / v, -1.0), 1.0)
        out[k, 3] = min(max(m.claimed_spd_y / v, -1.0), 1.0)
        out[k, 4] = min(max((m.claimed_pos_x - ego.pos_x) / r, -1.0), 1.0)
        out[k, 5] = min(max((m.claimed_pos_y - ego.pos_y) / r, -1.0), 1.0)
        out[k, 6] = min(max((m.claimed_spd_x - ego.spd_x) / v, -1.0), 1.0)
        out[k, 7] = min(max((m.claimed_spd_y - ego.spd_y) / v, -1.0), 1.0)
        out[k, 8] = min(max((m.rssi - spec.rssi_min) / rssi_span, 0.0), 1.0)
    return out


def build_label(
    truth_states: Sequence[VehicleState], attacker: AttackerType, spec: NormalizationSpec
) -> np.ndarray:
    """Label block (5, 3): the sender's true future positions normalized by R
    plus the attacker-class code replicated down the third column."""
    spec.validate()
    if len(truth_states) != WINDOW_LABEL_STEPS:
        raise ValueError(f"need exactly {WINDOW_LABEL_STEPS} truth states, got {len(truth_states)}")
    for prev, cur in zip(truth_states, truth_states[1:]):
        if cur.t != prev.t + 1:
            raise ValueError("truth states must cover consecutive steps")
    out = np.empty((WINDOW_LABEL_STEPS, LABEL_DIM))
    for k, s in enumerate(truth_states):
        out[k, 0] = s.pos_x / spec.region_side
        out[k, 1] = s.pos_y / spec.region_side
        out[k, 2] = float(attacker)
    return out


def windows_from_stream(
    msgs: Sequence[Bsm],
    ego_states: Sequence[VehicleState],
    sender_states: Sequence[VehicleState],
    attacker: AttackerType,
    spec: NormalizationSpec,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Slide a stride-1 window over one sender's stream.

    ego_states and sender_states are full per-step tracks indexed by step
    (state.t == index). A gapless stream of length L yields max(0, L - 14)
    pairs; windows spanning a step gap or running past the end of the truth
    track are skipped.
    """
    pairs: list[tuple[np.ndarray, np.ndarray]] = []
    for k in range(max(0, len(msgs) - (WINDOW_SPAN - 1))):
        chunk = msgs[k : k + WINDOW_INPUT_STEPS]
        first = chunk[0].step
        last = chunk[-1].step
        if first < 0 or last + WINDOW_LABEL_STEPS >= len(sender_states) or first + WINDOW_INPUT_STEPS > len(ego_states):
            continue
        try:
            fw = build_feature_window(chunk, ego_states[first : first + WINDOW_INPUT_STEPS], spec)
        except WindowError:
            continue
        lb = build_label(sender_states[last + 1 : last + 1 + WINDOW_LABEL_STEPS], attacker, spec)
        pairs.append((fw, lb))
    return pairs


def denormalize_pos(norm_xy: np.ndarray, spec: NormalizationSpec) -> np.ndarray:
    """Map normalized positions (last axis = (x, y)) back to metres."""
    return np.asarray(norm_xy, dtype=float) * spec.region_side
