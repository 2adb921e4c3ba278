"""Relationship labels shared by every stage of the pipeline."""

from __future__ import annotations

from enum import Enum


class RelationshipLabel(str, Enum):
    """How the left book of an ordered pair relates to the right book."""

    SW = "SW"  # same work
    DV = "DV"  # different volumes of the same work
    PARTOF = "PARTOF"  # left is fully contained in right
    CONTAINS = "CONTAINS"  # left fully contains right
    DIFF = "DIFF"  # unrelated works
    OVERLAPS = "OVERLAPS"  # shared content, neither side subsumes the other

    def __str__(self) -> str:  # pragma: no cover - trivial
        return self.value


# Canonical ordering for class lists, model outputs, and reports.
CLASS_ORDER = [
    RelationshipLabel.SW,
    RelationshipLabel.DV,
    RelationshipLabel.PARTOF,
    RelationshipLabel.CONTAINS,
    RelationshipLabel.DIFF,
    RelationshipLabel.OVERLAPS,
]

WHOLE_PART = (RelationshipLabel.PARTOF, RelationshipLabel.CONTAINS)

# Label of (right, left) given the label of (left, right).
INVERSE_LABEL = {
    RelationshipLabel.SW: RelationshipLabel.SW,
    RelationshipLabel.DV: RelationshipLabel.DV,
    RelationshipLabel.PARTOF: RelationshipLabel.CONTAINS,
    RelationshipLabel.CONTAINS: RelationshipLabel.PARTOF,
    RelationshipLabel.DIFF: RelationshipLabel.DIFF,
    RelationshipLabel.OVERLAPS: RelationshipLabel.OVERLAPS,
}


def canonical_class_list(labels) -> list[RelationshipLabel]:
    """Order the distinct labels in `labels` by the canonical class ordering."""
    present = {RelationshipLabel(lab) for lab in labels}
    return [lab for lab in CLASS_ORDER if lab in present]
