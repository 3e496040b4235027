"""Module for tracking exploration statistics."""

from typing import Dict, List, Optional
from dataclasses import dataclass
from enum import Enum, auto


class RejectReason(Enum):
    """Why an enumerated configuration was dropped."""

    DEGREES = auto()
    BATCH = auto()
    MEMORY = auto()
    PLACEMENT = auto()
    CHUNK_LAYOUT = auto()
    SPREAD_CAP = auto()
    GENERAL = auto()


def classify_violation(violation: str) -> RejectReason:
    """Map a validate_config violation string to a reject reason."""
    text = violation.lower()
    if "memory" in text:
        return RejectReason.MEMORY
    if "building" in text:
        return RejectReason.PLACEMENT
    if "microbatch" in text or "global_batch" in text:
        return RejectReason.BATCH
    if "chunk" in text or "round-robin" in text or "v-shape" in text:
        return RejectReason.CHUNK_LAYOUT
    if any(key in text for key in ("tp", "ep", "cp", "context", "degree", "hsdp")):
        return RejectReason.DEGREES
    return RejectReason.GENERAL


@dataclass
class ExplorationStats:
    """Counters collected while a search runs."""

    def __init__(self) -> None:
        """Initialize exploration statistics."""
        self.enumerated = 0
        self.feasible = 0
        self.evaluated = 0
        self.cache_hits = 0
        self.failed = 0
        self.pruned_ppout = 0
        self.refined = 0
        self.partitions_evaluated = 0
        self.truncated = False
        self.reject_reasons: Dict[RejectReason, int] = {}
        self.sample_violations: Dict[RejectReason, str] = {}
        self.failures: List[str] = []

    def record_enumerated(self, count: int = 1) -> None:
        """Record configurations produced by the enumerator."""
        self.enumerated += count

    def record_feasible(self) -> None:
        """Record a configuration that passed validation."""
        self.feasible += 1

    def record_rejected(self, violations: List[str]) -> None:
        """Record a configuration that failed validation."""
        for violation in violations:
            reason = classify_violation(violation)
            self.reject_reasons[reason] = self.reject_reasons.get(reason, 0) + 1
            self.sample_violations.setdefault(reason, violation)

    def record_spread_rejected(self) -> None:
        """Record a partition dropped by the chunk spread cap."""
        reason = RejectReason.SPREAD_CAP
        self.reject_reasons[reason] = self.reject_reasons.get(reason, 0) + 1

    def record_evaluated(self, cached: bool = False) -> None:
        """Record one candidate evaluation."""
        if cached:
            self.cache_hits += 1
        else:
            self.evaluated += 1

    def record_failure(self, label: str, error: str) -> None:
        """Record a candidate whose DAG could not be built."""
        self.failed += 1
        self.failures.append(f"{label}: {error}")

    def record_pruned(self, count: int) -> None:
        """Record PP-out candidates skipped by early pruning."""
        self.pruned_ppout += count

    def record_refined(self, partitions: int, truncated: bool) -> None:
        """Record one partition search."""
        self.refined += 1
        self.partitions_evaluated += partitions
        self.truncated = self.truncated or truncated

    def binding_constraints(self, limit: Optional[int] = None) -> List[str]:
        """Most frequent reject reasons with one example each."""
        ranked = sorted(self.reject_reasons.items(), key=lambda kv: (-kv[1], kv[0].name))
        lines = []
        for reason, count in ranked[:limit]:
            example = self.sample_violations.get(reason, "")
            suffix = f" (e.g. {example})" if example else ""
            lines.append(f"{reason.name.lower()}: {count}{suffix}")
        return lines

    def _format_summary(self) -> str:
        """Format the exploration summary."""
        summary = ""
        summary += "─" * 53 + "\n"
        summary += " " * 16 + "Exploration Summary\n"
        summary += "─" * 20 + "┬" + "─" * 32 + "\n"
        summary += " Configurations     │ Search\n"
        summary += "─" * 20 + "┼" + "─" * 32 + "\n"
        summary += f" Enumerated: {self.enumerated:<6} │ Evaluated: {self.evaluated}\n"
        summary += f" Feasible: {self.feasible:<8} │ Cache hits: {self.cache_hits}\n"
        rejected = sum(self.reject_reasons.values())
        summary += f" Rejected: {rejected:<8} │ Pruned PP-out: {self.pruned_ppout}\n"
        summary += f" Failed: {self.failed:<10} │ Partitions: {self.partitions_evaluated}\n"
        if self.truncated:
            summary += " Budget truncated   │ (--max-wall-time reached)\n"
        summary += "─" * 53 + "\n"

        if self.reject_reasons:
            summary += "\nReject Reasons:\n"
            for line in self.binding_constraints():
                summary += f"  {line}\n"

        if self.failures:
            summary += "\nFailures:\n"
            for failure in self.failures:
                summary += f"  {failure}\n"

        return summary

    def __str__(self) -> str:
        """Return string representation of stats."""
        return self._format_summary()

    def get_statistics(self) -> dict:
        """Get all statistics as a dictionary.

        Returns:
            Dictionary containing all statistics
        """
        return {
            "enumerated": self.enumerated,
            "feasible": self.feasible,
            "evaluated": self.evaluated,
            "cache_hits": self.cache_hits,
            "failed": self.failed,
            "pruned_ppout": self.pruned_ppout,
            "refined": self.refined,
            "partitions_evaluated": self.partitions_evaluated,
            "truncated": self.truncated,
            "reject_reasons": {
                reason.name.lower(): count
                for reason, count in sorted(
                    self.reject_reasons.items(), key=lambda kv: kv[0].name
                )
            },
        }
