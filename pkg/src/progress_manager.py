"""Progress tracking for candidate evaluation and sweeps."""
import sys
from typing import Optional, Any
from tqdm import tqdm


class ProgressManager:
    """Manages progress bars for exploration and sweeps."""

    def __init__(self, enabled: Optional[bool] = None) -> None:
        """Initialize progress bars as None.

        Args:
            enabled: Show bars; defaults to whether stderr is a terminal
        """
        self.enabled = sys.stderr.isatty() if enabled is None else enabled
        self.candidate_bar: Optional[tqdm] = None
        self.partition_bar: Optional[tqdm] = None

    def __enter__(self) -> 'ProgressManager':
        """Context manager entry."""
        return self

    def __exit__(
        self,
        exc_type: Optional[type],
        exc_val: Optional[Exception],
        exc_tb: Optional[Any],
    ) -> None:
        """Clean up progress bars on exit."""
        if self.candidate_bar:
            self.candidate_bar.close()
        if self.partition_bar:
            self.partition_bar.close()

    def start_candidate_progress(
        self, total: int, desc: str = "Evaluating configurations"
    ) -> None:
        """Initialize the candidate progress bar.

        Args:
            total: Number of candidates to evaluate
            desc: Bar label
        """
        if self.candidate_bar:
            self.candidate_bar.close()
        self.candidate_bar = tqdm(
            total=total,
            desc=desc,
            unit="cfg",
            disable=not self.enabled
        )

    def start_partition_progress(self, total: int) -> None:
        """Initialize the partition-search progress bar.

        Args:
            total: Number of templates to refine
        """
        if self.partition_bar:
            self.partition_bar.close()

        self.partition_bar = tqdm(
            total=total,
            desc="Searching partitions",
            unit="cfg",
            leave=False,
            disable=not self.enabled
        )

    def update_candidate_progress(self, amount: int = 1) -> None:
        """Update the candidate progress bar.

        Args:
            amount: Amount to increment by (default: 1)
        """
        if self.candidate_bar:
            self.candidate_bar.update(amount)

    def update_partition_progress(self, amount: int = 1) -> None:
        """Update the partition progress bar.

        Args:
            amount: Amount to increment by (default: 1)
        """
        if self.partition_bar:
            self.partition_bar.update(amount)
