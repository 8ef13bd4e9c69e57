"""Threshold-gated reconfiguration decisions.

An improvement effect is seconds saved per hour: the per-request time
reduction measured in the verification environment, scaled by how often
production actually calls the app. The gate compares the best candidate
effect against the currently loaded pattern's effect and only proposes a
reconfiguration when the ratio clears the threshold. A human (or the
auto-approve flag) then answers ok or ng.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

logger = logging.getLogger(__name__)

VERDICT_PROPOSE = "propose"
VERDICT_NO_ACTION = "no_action"

APPROVAL_PENDING = "pending"
APPROVAL_APPROVED = "approved"
APPROVAL_REJECTED = "rejected"


@dataclass(frozen=True)
class ImprovementEffect:
    """Projected seconds saved per hour by running one pattern."""

    app_id: str
    pattern_id: str
    baseline_time: float
    offloaded_time: float
    frequency: float
    effect: float

    @classmethod
    def compute(
        cls, app_id: str, pattern_id: str, baseline: float, offloaded: float, frequency: float
    ) -> "ImprovementEffect":
        return cls(
            app_id=app_id,
            pattern_id=pattern_id,
            baseline_time=baseline,
            offloaded_time=offloaded,
            frequency=frequency,
            effect=effect_of(baseline, offloaded, frequency),
        )


@dataclass(frozen=True)
class ReconfigProposal:
    proposal_id: str
    from_pattern_id: str
    current_effect: float
    best_new: ImprovementEffect | None
    ratio: float
    threshold: float
    verdict: str
    approval: str = APPROVAL_PENDING
    diagnostic: str = ""


def effect_of(baseline: float, offloaded: float, freq: float) -> float:
    """(per-request reduction) x (requests per hour). May be negative."""
    if freq < 0:
        raise ValueError("frequency must be >= 0")
    return (baseline - offloaded) * freq


def proposal_identity(from_pattern_id: str, to_pattern_id: str) -> str:
    digest = hashlib.sha256(f"{from_pattern_id}=>{to_pattern_id}".encode())
    return digest.hexdigest()[:12]


def decide(
    current: ImprovementEffect,
    candidates: Sequence[ImprovementEffect],
    threshold: float,
    effect_floor: float = 0.0,
) -> ReconfigProposal:
    """Gate the best candidate against the current pattern's effect.

    The ratio best/current must reach the threshold to propose. When the
    current pattern saves nothing (no traffic, or a non-improving
    pattern), the ratio is infinite and the candidate only has to beat
    the absolute effect floor.
    """
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    if not candidates:
        return ReconfigProposal(
            proposal_id="",
            from_pattern_id=current.pattern_id,
            current_effect=current.effect,
            best_new=None,
            ratio=0.0,
            threshold=threshold,
            verdict=VERDICT_NO_ACTION,
            diagnostic="no candidates to evaluate",
        )
    best = sorted(candidates, key=lambda e: (-e.effect, e.app_id, e.pattern_id))[0]
    if current.effect <= 0:
        ratio = math.inf
        propose = best.effect > effect_floor
        diagnostic = "" if propose else "candidate effect does not clear the floor"
    else:
        ratio = best.effect / current.effect
        propose = ratio >= threshold
        diagnostic = "" if propose else "ratio below threshold"
    return ReconfigProposal(
        proposal_id=proposal_identity(current.pattern_id, best.pattern_id),
        from_pattern_id=current.pattern_id,
        current_effect=current.effect,
        best_new=best,
        ratio=ratio,
        threshold=threshold,
        verdict=VERDICT_PROPOSE if propose else VERDICT_NO_ACTION,
        diagnostic=diagnostic,
    )


class ApprovalChannel(ABC):
    """Source of the ok/ng answer for a pending proposal."""

    @abstractmethod
    def ask(self, proposal: ReconfigProposal) -> str:
        """One of the APPROVAL_* states; pending means ask again later."""


class AutoApprove(ApprovalChannel):
    def ask(self, proposal: ReconfigProposal) -> str:
        return APPROVAL_APPROVED


class PromptApproval(ApprovalChannel):
    """Interactive terminal prompt."""

    def __init__(self, input_fn: Callable[[str], str] = input):
        self._input = input_fn

    def ask(self, proposal: ReconfigProposal) -> str:
        best = proposal.best_new
        assert best is not None
        ratio = "inf" if math.isinf(proposal.ratio) else f"{proposal.ratio:.2f}"
        prompt = (
            f"Reconfigure FPGA from {proposal.from_pattern_id} to {best.pattern_id}? "
            f"expected gain {best.effect:.1f} s/h, ratio {ratio} [ok/ng] "
        )
        try:
            answer = self._input(prompt).strip().lower()
        except EOFError:
            return APPROVAL_PENDING
        if answer == "ok":
            return APPROVAL_APPROVED
        if answer == "ng":
            return APPROVAL_REJECTED
        return APPROVAL_PENDING


class FileDropApproval(ApprovalChannel):
    """Answer file named by proposal id, holding 'ok' or 'ng'.

    The file is consumed on read so one answer covers one proposal. No
    file yet means the proposal stays pending until a later cycle.
    """

    def __init__(self, answers_dir: str | Path):
        self._dir = Path(answers_dir)

    def answer_path(self, proposal_id: str) -> Path:
        return self._dir / f"{proposal_id}.answer"

    def ask(self, proposal: ReconfigProposal) -> str:
        path = self.answer_path(proposal.proposal_id)
        try:
            answer = path.read_text().strip().lower()
        except OSError:
            return APPROVAL_PENDING
        path.unlink(missing_ok=True)
        if answer == "ok":
            return APPROVAL_APPROVED
        if answer == "ng":
            return APPROVAL_REJECTED
        logger.warning("ignoring unrecognized answer %r for %s", answer, proposal.proposal_id)
        return APPROVAL_PENDING


def await_approval(proposal: ReconfigProposal, channel: ApprovalChannel) -> ReconfigProposal:
    """Resolve a proposed reconfiguration through the given channel.

    A pending answer leaves the proposal retriable; the caller persists
    rejected proposals so identical re-proposals can be suppressed for a
    cool-down period.
    """
    if proposal.verdict != VERDICT_PROPOSE:
        raise ValueError("only proposed reconfigurations can be approved")
    return dataclasses.replace(proposal, approval=channel.ask(proposal))
