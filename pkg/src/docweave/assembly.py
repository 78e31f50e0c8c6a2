"""Grouping, reading order, dedup, and header/footer correction.

Reading order is uniformly "ascending top, then ascending left" in
top-left-origin pixel space, with entity id as the final tie-break so that
assembly is a pure function of the detection set: permuting the input order
of detections yields a byte-identical page.

Pipeline per page: ``dedupe_page`` -> ``assign_groups`` ->
``order_page_elements``. Across pages, ``correct_headers_footers`` runs once
as a whole-document barrier.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .geometry import BBox, Point, contains_midpoint, iou
from .ingest import RawDetection
from .metrics import indel_distance
from .model import (
    ElementLabel,
    Entity,
    Group,
    GroupType,
    LayoutLabel,
    PageResult,
    SchemaWeights,
    make_group,
)

logger = logging.getLogger(__name__)

#: DBSCAN label for points that belong to no cluster.
NOISE = -1

#: Labels never pulled into layout groups.
GROUP_EXCLUDED_LABELS = frozenset(
    {ElementLabel.PAGE_HEADER, ElementLabel.PAGE_FOOTER, ElementLabel.TABLE_OF_CONTENT}
)

#: Types whose text never triggers header/footer relabeling.
RELABEL_EXEMPT_LABELS = frozenset(
    {ElementLabel.PAGE_HEADER, ElementLabel.PAGE_FOOTER, ElementLabel.TABLE, ElementLabel.IMAGE}
)

#: Duplicate detections must overlap at least this much (IoU) to be merged.
DUPLICATE_IOU_THRESHOLD = 0.5

#: Fraction of the page height considered "the bottom" by the footer heuristic.
BOTTOM_BAND_FRACTION = 0.2


@dataclass(frozen=True)
class ClusterParams:
    eps: float = 0.3
    min_samples: int = 2

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.min_samples < 1:
            raise ValueError(f"min_samples must be >= 1, got {self.min_samples}")


@dataclass(frozen=True)
class RowOrderParams:
    angle_threshold_degrees: float = 50.0

    def __post_init__(self):
        if not 0 < self.angle_threshold_degrees <= 90:
            raise ValueError(
                f"angle threshold must be in (0, 90], got {self.angle_threshold_degrees}"
            )


@dataclass(frozen=True)
class HeaderFooterParams:
    fuzzy_threshold: int = 95  # strict greater-than
    header_top_limit: float = 100.0

    def __post_init__(self):
        if not 0 < self.fuzzy_threshold <= 100:
            raise ValueError(f"fuzzy threshold must be in (0, 100], got {self.fuzzy_threshold}")


@dataclass(frozen=True)
class AssemblyParams:
    cluster: ClusterParams = field(default_factory=ClusterParams)
    row: RowOrderParams = field(default_factory=RowOrderParams)
    header_footer: HeaderFooterParams = field(default_factory=HeaderFooterParams)


def _reading_key(entity: Entity) -> tuple:
    box = entity.pixel_coordinates
    return (box.top, box.left, box.right, box.bottom, entity.id)


def candidate_members(layout_box: BBox, entities: Sequence[Entity]) -> list[Entity]:
    """Entities whose midpoint lies inside the layout box, minus pinned labels."""
    return [
        e
        for e in entities
        if e.type not in GROUP_EXCLUDED_LABELS
        and contains_midpoint(layout_box, e.pixel_coordinates)
    ]


def minmax_scale(values: Sequence[float]) -> list[float]:
    """Scale to [0, 1]; a constant sequence maps to all zeros."""
    if not values:
        return []
    low, high = min(values), max(values)
    if high == low:
        return [0.0] * len(values)
    return [(v - low) / (high - low) for v in values]


def dbscan(points: Sequence[float], params: ClusterParams) -> list[int]:
    """1-D DBSCAN with deterministic labels.

    A core point has at least ``min_samples`` points (itself included) within
    ``eps``. Clusters are grown from core points in input order, so cluster
    numbers follow first-seen order and border points join the earliest
    cluster that reaches them. Unreachable non-core points get NOISE.
    """
    n = len(points)
    neighbors = [
        [j for j in range(n) if abs(points[i] - points[j]) <= params.eps]
        for i in range(n)
    ]
    core = [len(neighbors[i]) >= params.min_samples for i in range(n)]
    labels: list[Optional[int]] = [None] * n
    cluster = 0
    for start in range(n):
        if labels[start] is not None or not core[start]:
            continue
        labels[start] = cluster
        queue = deque([start])
        while queue:
            point = queue.popleft()
            for neighbor in neighbors[point]:
                if labels[neighbor] is None:
                    labels[neighbor] = cluster
                    if core[neighbor]:
                        queue.append(neighbor)
        cluster += 1
    return [NOISE if label is None else label for label in labels]


def cluster_multi_column(
    members: Sequence[Entity], params: ClusterParams
) -> list[Group]:
    """Cluster a multi-column region into left-to-right column groups.

    x-centers are min-max scaled and clustered with DBSCAN; each cluster
    becomes a ``multi-col`` group ordered top-to-bottom. Noise points become
    singleton groups so no entity is dropped. Groups are emitted left-to-right
    by mean raw x-center (ties by mean top).
    """
    if not members:
        return []
    labels = dbscan(minmax_scale([e.x_center for e in members]), params)
    clustered: dict[int, list[Entity]] = {}
    singletons: list[list[Entity]] = []
    for entity, label in zip(members, labels):
        if label == NOISE:
            singletons.append([entity])
        else:
            clustered.setdefault(label, []).append(entity)

    columns = [sorted(column, key=_reading_key) for column in clustered.values()]
    columns.extend(singletons)
    columns.sort(
        key=lambda column: (
            sum(e.x_center for e in column) / len(column),
            sum(e.pixel_coordinates.top for e in column) / len(column),
            column[0].id,
        )
    )
    return [make_group(GroupType.MULTI_COLUMN, column) for column in columns]


def line_angle(a: Point, b: Point) -> float:
    """Absolute angle of the segment a-b against the horizontal, in [0, 90]."""
    dx = abs(b.x - a.x)
    dy = abs(b.y - a.y)
    if dx == 0 and dy == 0:
        return 0.0
    return math.degrees(math.atan2(dy, dx))


def order_row_group(members: Sequence[Entity], params: RowOrderParams) -> Group:
    """Order a row region left-to-right, fixing vertically stacked neighbors.

    Members are sorted by (x_center, top); one left-to-right pass then checks
    each adjacent pair: when the angle between their midpoints reaches the
    threshold the pair is vertically related rather than side by side, so the
    upper element (smaller top) is placed first.
    """
    ordered = sorted(members, key=lambda e: (e.x_center, e.pixel_coordinates.top, e.id))
    for i in range(len(ordered) - 1):
        a, b = ordered[i], ordered[i + 1]
        if (
            line_angle(a.mid_point, b.mid_point) >= params.angle_threshold_degrees
            and b.pixel_coordinates.top < a.pixel_coordinates.top
        ):
            ordered[i], ordered[i + 1] = b, a
    return make_group(GroupType.ROW, ordered)


def order_generic_group(members: Sequence[Entity]) -> Group:
    """Order a generic region top-to-bottom (ties left-to-right)."""
    return make_group(GroupType.GENERIC, sorted(members, key=_reading_key))


def assign_groups(
    layout_detections: Sequence[RawDetection],
    entities: Sequence[Entity],
    params: AssemblyParams,
) -> tuple[list[Group], list[str]]:
    """Assign entities to layout regions; each entity joins at most one group.

    Regions claim entities in descending confidence order (ties by descending
    area, then position) so the strongest region wins overlaps. Entities left
    unclaimed, including the labels excluded from grouping, become non-group
    blocks.
    """
    regions = sorted(
        layout_detections,
        key=lambda d: (
            -d.confidence,
            -d.bbox.area,
            d.bbox.top,
            d.bbox.left,
            d.label,
        ),
    )
    claimed: set[str] = set()
    groups: list[Group] = []
    for region in regions:
        candidates = [
            e for e in candidate_members(region.bbox, entities) if e.id not in claimed
        ]
        if not candidates:
            continue
        label = LayoutLabel(region.label)
        if label is LayoutLabel.MULTI_COLUMN:
            region_groups = cluster_multi_column(candidates, params.cluster)
        elif label is LayoutLabel.ROW_GROUP:
            region_groups = [order_row_group(candidates, params.row)]
        else:
            region_groups = [order_generic_group(candidates)]
        groups.extend(region_groups)
        claimed.update(eid for group in region_groups for eid in group.ids)
    non_group_ids = [e.id for e in entities if e.id not in claimed]
    return groups, non_group_ids


def dedupe_page(entities: Sequence[Entity]) -> list[Entity]:
    """Remove duplicate detections, keeping the higher-confidence entity.

    Two entities are duplicates when they share a type, have identical
    normalized text, and overlap with IoU above 0.5; the IoU gate keeps
    legitimately repeated strings apart. Duplicate sets are the connected
    components of that relation; ties on confidence keep the smallest id.
    Survivors preserve the input order.
    """
    entities = list(entities)
    parent = {e.id: e.id for e in entities}

    def find(eid: str) -> str:
        while parent[eid] != eid:
            parent[eid] = parent[parent[eid]]
            eid = parent[eid]
        return eid

    for i, a in enumerate(entities):
        for b in entities[i + 1 :]:
            if (
                a.type is b.type
                and a.value.text == b.value.text
                and iou(a.pixel_coordinates, b.pixel_coordinates) > DUPLICATE_IOU_THRESHOLD
            ):
                parent[find(a.id)] = find(b.id)

    components: dict[str, list[Entity]] = {}
    for entity in entities:
        components.setdefault(find(entity.id), []).append(entity)
    keep: set[str] = set()
    for members in components.values():
        survivor = min(members, key=lambda e: (-e.confidence, e.id))
        keep.add(survivor.id)
        for dropped in members:
            if dropped.id != survivor.id:
                logger.info(
                    "dropping duplicate %s %r (confidence %.3f) in favor of %s",
                    dropped.type.value,
                    dropped.id,
                    dropped.confidence,
                    survivor.id,
                )
    return [e for e in entities if e.id in keep]


def order_page_elements(
    groups: Sequence[Group],
    non_group_entities: Sequence[Entity],
    members: Mapping[str, Entity],
) -> dict[str, Entity]:
    """Merge groups and loose entities into one reading-ordered element map.

    Each group is one block keyed by its bbox top; each loose entity is its
    own block. Blocks sort by (top, left); groups expand in their internal
    order. Page headers always come first and page footers last regardless of
    their detected position.
    """
    headers = [e for e in non_group_entities if e.type is ElementLabel.PAGE_HEADER]
    footers = [e for e in non_group_entities if e.type is ElementLabel.PAGE_FOOTER]
    middle = [
        e
        for e in non_group_entities
        if e.type not in (ElementLabel.PAGE_HEADER, ElementLabel.PAGE_FOOTER)
    ]

    blocks: list[tuple[tuple, list[Entity]]] = []
    for group in groups:
        box = group.pixel_coordinates
        blocks.append(((box.top, box.left, group.ids[0]), [members[i] for i in group.ids]))
    for entity in middle:
        box = entity.pixel_coordinates
        blocks.append(((box.top, box.left, entity.id), [entity]))
    blocks.sort(key=lambda block: block[0])

    sequence = sorted(headers, key=_reading_key)
    for _, block_members in blocks:
        sequence.extend(block_members)
    sequence.extend(sorted(footers, key=_reading_key))
    return {e.id: e for e in sequence}


def assemble_page(
    page_number: int,
    layout_detections: Sequence[RawDetection],
    entities: Sequence[Entity],
    params: AssemblyParams,
    skipped_image_ids: Sequence[str] = (),
) -> PageResult:
    """Assemble one page: dedupe, group, and order already gated entities."""
    survivors = sorted(dedupe_page(entities), key=_reading_key)
    by_id = {e.id: e for e in survivors}
    groups, non_group_ids = assign_groups(layout_detections, survivors, params)
    non_group_set = set(non_group_ids)
    elements = order_page_elements(
        groups, [by_id[i] for i in non_group_ids], by_id
    )
    return PageResult(
        page_number=page_number,
        elements=elements,
        groups=tuple(groups),
        non_groups=tuple(eid for eid in elements if eid in non_group_set),
        skipped_images=tuple(sorted(skipped_image_ids)),
    )


def fuzzy_ratio(a: str, b: str) -> int:
    """Similarity ratio in [0, 100] based on the indel distance."""
    total = len(a) + len(b)
    if total == 0:
        return 100
    return round(100 * (1 - indel_distance(a, b) / total))


def _page_height(page: PageResult, explicit: Optional[float]) -> float:
    if explicit is not None:
        return explicit
    bottoms = [e.pixel_coordinates.bottom for e in page.elements.values()]
    return max(bottoms) if bottoms else 0.0


def _rebuild_page(page: PageResult, updated: Mapping[str, Entity]) -> PageResult:
    """Re-derive groups and reading order after entities were relabeled.

    Entities relabeled to page_header/page_footer leave their groups (those
    labels never group); shrunken groups get recomputed bounding boxes and
    empty groups disappear.
    """
    elements = {eid: updated.get(eid, ent) for eid, ent in page.elements.items()}
    groups: list[Group] = []
    for group in page.groups:
        remaining = [
            elements[eid]
            for eid in group.ids
            if elements[eid].type not in GROUP_EXCLUDED_LABELS
        ]
        if remaining:
            groups.append(make_group(group.type, remaining))
    grouped_ids = {eid for group in groups for eid in group.ids}
    non_group_entities = [e for e in elements.values() if e.id not in grouped_ids]
    ordered = order_page_elements(groups, non_group_entities, elements)
    return PageResult(
        page_number=page.page_number,
        elements=ordered,
        groups=tuple(groups),
        non_groups=tuple(eid for eid in ordered if eid not in grouped_ids),
        skipped_images=page.skipped_images,
    )


def correct_headers_footers(
    pages: Sequence[PageResult],
    params: HeaderFooterParams,
    schema: SchemaWeights,
    page_heights: Optional[Mapping[int, float]] = None,
) -> list[PageResult]:
    """Propagate header/footer labels across pages and fix swapped positions.

    Candidate strings come from entities already labeled page_header or
    page_footer. Any other text-bearing entity whose text fuzzy-matches a
    candidate from a different page (ratio strictly above the threshold) is
    relabeled, header candidates taking precedence. Relabeling repeats until
    stable so the whole pass is idempotent. A position heuristic then swaps
    entities whose label contradicts their placement: a "header" that starts
    below the top limit and sits in the bottom band of the page becomes a
    footer, and a "footer" that starts inside the top limit becomes a header.
    Reading order is re-derived for every page that changed.
    """
    pages = list(pages)
    if not pages:
        return []
    page_heights = page_heights or {}
    current: list[dict[str, Entity]] = [dict(p.elements) for p in pages]

    # Fuzzy relabeling to a fixed point.
    while True:
        candidates: list[tuple[int, ElementLabel, str]] = []
        for page, elements in zip(pages, current):
            for entity in elements.values():
                if entity.type in (ElementLabel.PAGE_HEADER, ElementLabel.PAGE_FOOTER):
                    if entity.value.text:
                        candidates.append((page.page_number, entity.type, entity.value.text))
        changed = False
        for page, elements in zip(pages, current):
            for eid, entity in elements.items():
                if entity.type in RELABEL_EXEMPT_LABELS or not entity.value.text:
                    continue
                new_label = None
                for target in (ElementLabel.PAGE_HEADER, ElementLabel.PAGE_FOOTER):
                    if any(
                        source_page != page.page_number
                        and kind is target
                        and fuzzy_ratio(entity.value.text, text) > params.fuzzy_threshold
                        for source_page, kind, text in candidates
                    ):
                        new_label = target
                        break
                if new_label is not None:
                    elements[eid] = entity.with_type(new_label, schema)
                    changed = True
        if not changed:
            break

    # Position heuristic: fix headers/footers the detector placed on the
    # wrong end of the page.
    for page, elements in zip(pages, current):
        height = _page_height(page, page_heights.get(page.page_number))
        if height <= 0:
            continue
        bottom_band = (1 - BOTTOM_BAND_FRACTION) * height
        for eid, entity in elements.items():
            top = entity.pixel_coordinates.top
            if (
                entity.type is ElementLabel.PAGE_HEADER
                and top > params.header_top_limit
                and entity.y_center >= bottom_band
            ):
                elements[eid] = entity.with_type(ElementLabel.PAGE_FOOTER, schema)
            elif (
                entity.type is ElementLabel.PAGE_FOOTER
                and top <= params.header_top_limit
                and entity.y_center < bottom_band
            ):
                elements[eid] = entity.with_type(ElementLabel.PAGE_HEADER, schema)

    result = []
    for page, elements in zip(pages, current):
        updated = {
            eid: entity
            for eid, entity in elements.items()
            if entity is not page.elements[eid]
        }
        result.append(_rebuild_page(page, updated) if updated else page)
    return result
