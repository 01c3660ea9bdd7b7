"""Class-balanced replay memory with recency-aware eviction, plus the filters.

The bank stores (feature vector, pseudo-label) pairs under a fixed capacity.
When full, it discards the oldest stored sample of whichever present class
has the highest smoothed frequency, so over-represented classes shrink first
and the stored set drifts toward class balance. Admission is gated by two
sample filters: agreement between the averaged prediction and the frozen
source model (consistency) and an entropy ceiling (confidence).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses
from .errors import ConfigError, ParseError


@dataclass
class FilterVerdict:
    """Outcome of the two admission filters for one sample."""

    consistent: bool
    confident: bool
    entropy: float

    @property
    def admitted(self):
        return self.consistent and self.confident


def filter_masks(avg_probs, source_probs, h_thr):
    """Evaluate the admission filters for one sample.

    avg_probs is the augmentation-averaged prediction, source_probs the
    frozen source model's prediction on the raw sample. Consistency requires
    equal argmax (ties broken by lowest index on both sides); confidence
    requires entropy(avg_probs) strictly below h_thr.
    """
    p = np.asarray(avg_probs, dtype=np.float64)
    q = np.asarray(source_probs, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError("avg_probs and source_probs must be equal-length vectors")
    if h_thr <= 0:
        raise ConfigError("h_thr must be positive")
    h = float(losses.entropy(p))
    return FilterVerdict(
        consistent=int(np.argmax(p)) == int(np.argmax(q)),
        confident=h < h_thr,
        entropy=h,
    )


@dataclass
class MemoryEntry:
    features: np.ndarray
    label: int
    tick: int  # global insertion counter; strictly increasing


class MemoryBank:
    """Capacity-bounded replay store; see module docstring for the policy."""

    def __init__(self, capacity, num_classes):
        if capacity < 1:
            raise ConfigError("capacity must be >= 1")
        if num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        self.capacity = int(capacity)
        self.num_classes = int(num_classes)
        self.entries: list[MemoryEntry] = []  # kept in tick (insertion) order
        self.class_frequency = np.zeros(self.num_classes)  # smoothed, updated per batch
        self._tick = 0

    def __len__(self):
        return len(self.entries)

    def class_counts(self):
        """Raw per-class counts of the stored entries."""
        counts = np.zeros(self.num_classes, dtype=np.int64)
        for e in self.entries:
            counts[e.label] += 1
        return counts

    def insert(self, features, label, verdict=None):
        """Store one admitted sample; returns the evicted entry or None.

        When the bank is full, the victim class is the present class with the
        highest smoothed frequency (ties to the lowest class index) and the
        victim is its oldest entry. A verdict, if given, must be an admission.
        """
        label = int(label)
        if not 0 <= label < self.num_classes:
            raise ValueError("label out of range")
        if verdict is not None and not verdict.admitted:
            raise ValueError("insert called with a rejected sample")
        evicted = None
        if len(self.entries) >= self.capacity:
            present = np.unique([e.label for e in self.entries])
            victim_class = int(present[np.argmax(self.class_frequency[present])])
            for i, e in enumerate(self.entries):  # entries are tick-ordered
                if e.label == victim_class:
                    evicted = self.entries.pop(i)
                    break
        self.entries.append(
            MemoryEntry(
                features=np.asarray(features, dtype=np.float64).copy(),
                label=label,
                tick=self._tick,
            )
        )
        self._tick += 1
        return evicted

    def update_class_frequency(self, beta):
        """Exponential update toward the current counts; runs once per batch.

        frequency <- (1 - beta) * frequency + beta * counts.
        """
        if not 0 < beta <= 1:
            raise ConfigError("beta must lie in (0, 1]")
        self.class_frequency = (
            1.0 - beta
        ) * self.class_frequency + beta * self.class_counts()
        return self.class_frequency.copy()

    def contents(self):
        """Copies of the stored features and labels, in insertion order."""
        if not self.entries:
            d = 0
            return np.empty((0, d)), np.empty(0, dtype=np.int64)
        feats = np.stack([e.features for e in self.entries]).copy()
        labels = np.asarray([e.label for e in self.entries], dtype=np.int64)
        return feats, labels

    def dump(self, path):
        """Write the bank in the dataset text format plus a frequency sidecar.

        The smoothed class frequencies ride along as a '#' comment line that
        dataset readers skip.
        """
        from . import datagen

        feats, labels = self.contents()
        if len(self.entries) == 0:
            feats = np.empty((0, 2))
        datagen.write_dataset(path, feats, labels, np.zeros(len(labels), dtype=bool))
        with open(path, "a") as fh:
            freq = ",".join("%.17g" % v for v in self.class_frequency)
            fh.write(f"# class_frequency,{self._tick},{freq}\n")

    @classmethod
    def load(cls, path, capacity, num_classes):
        """Rebuild a bank from dump output; frequencies restore bit-exactly."""
        from . import datagen

        feats, labels, flags = datagen.read_dataset(path)
        if flags.any():
            raise ParseError("memory dumps cannot contain outlier rows")
        sidecar = None
        with open(path) as fh:
            for line in fh:
                if line.startswith("# class_frequency,"):
                    sidecar = line.strip().split(",")
        bank = cls(capacity, num_classes)
        if len(labels) > capacity:
            raise ParseError("dump holds more entries than the requested capacity")
        for x, y in zip(feats, labels):
            bank.insert(x, int(y))
        if sidecar is not None:
            tick = int(sidecar[1])
            freq = np.asarray([float(v) for v in sidecar[2:]])
            if freq.shape != (num_classes,):
                raise ParseError("frequency sidecar does not match num_classes")
            bank.class_frequency = freq
            bank._tick = max(bank._tick, tick)
        return bank
