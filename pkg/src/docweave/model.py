"""Document data model: labels, schema weights, entities, groups, pages, documents.

All types are immutable after construction and safe to share across threads.
The JSON shape produced by :func:`document_to_dict` is the contract between
assembly, export, and evaluation; ``elements`` is serialized as an ordered
object whose key order is the page reading order.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping, Optional, Sequence

from .errors import ValidationError
from .geometry import BBox, Point, midpoint, union_bbox


class ElementLabel(str, Enum):
    """Semantic content labels produced by the element detector."""

    TITLE = "title"
    HEADER = "header"
    SECTION = "section"
    PAGE_HEADER = "page_header"
    PAGE_FOOTER = "page_footer"
    TEXT = "text"
    LIST_ITEM = "list_item"
    TABLE_OF_CONTENT = "table_of_content"
    TABLE = "table"
    IMAGE = "image"
    TABLE_CAPTION = "table_caption"
    IMAGE_CAPTION = "image_caption"


class LayoutLabel(str, Enum):
    """Structural region labels produced by the layout detector."""

    LAYOUT_BOX = "layout_box"
    COLUMN_GROUP = "column_group"
    COLUMN_TEXT = "column_text"
    GROUP = "group"
    MULTI_COLUMN = "multi_column"
    ROW_GROUP = "row_group"


class GroupType(str, Enum):
    MULTI_COLUMN = "multi-col"
    ROW = "row"
    GENERIC = "group"


#: Default per-label weights. Lower weight = higher in the document hierarchy.
#: Weights drive ordering semantics and knowledge-graph edge kinds; labels
#: without a canonical value are configurable via SchemaWeights.with_overrides.
DEFAULT_WEIGHTS: dict[ElementLabel, int] = {
    ElementLabel.TITLE: 1,
    ElementLabel.HEADER: 2,
    ElementLabel.SECTION: 2,
    ElementLabel.TABLE: 3,
    ElementLabel.IMAGE: 3,
    ElementLabel.TABLE_OF_CONTENT: 4,
    ElementLabel.TABLE_CAPTION: 4,
    ElementLabel.IMAGE_CAPTION: 4,
    ElementLabel.PAGE_HEADER: 5,
    ElementLabel.TEXT: 6,
    ElementLabel.LIST_ITEM: 6,
    ElementLabel.PAGE_FOOTER: 7,
}


@dataclass(frozen=True)
class SchemaWeights:
    """Total mapping from element label to a positive integer weight."""

    weights: Mapping[ElementLabel, int] = field(
        default_factory=lambda: dict(DEFAULT_WEIGHTS)
    )

    def __post_init__(self):
        normalized: dict[ElementLabel, int] = {}
        for label, weight in self.weights.items():
            label = ElementLabel(label)
            if not isinstance(weight, int) or isinstance(weight, bool) or weight < 1:
                raise ValidationError(
                    f"weight for {label.value!r} must be a positive integer, got {weight!r}"
                )
            normalized[label] = weight
        missing = [label.value for label in ElementLabel if label not in normalized]
        if missing:
            raise ValidationError(f"schema weights missing labels: {missing}")
        object.__setattr__(self, "weights", normalized)

    def weight_of(self, label: ElementLabel) -> int:
        return self.weights[ElementLabel(label)]

    @classmethod
    def with_overrides(cls, overrides: Mapping[str, int]) -> "SchemaWeights":
        merged = dict(DEFAULT_WEIGHTS)
        for name, weight in overrides.items():
            try:
                label = ElementLabel(name)
            except ValueError:
                raise ValidationError(f"unknown element label in weight overrides: {name!r}")
            merged[label] = weight
        return cls(merged)


def weight_of(label: ElementLabel, schema: SchemaWeights) -> int:
    return schema.weight_of(label)


@dataclass(frozen=True)
class EntityValue:
    """Textual payload of an entity, optionally enriched with title/summary/data."""

    text: str = ""
    title: Optional[str] = None
    summary: Optional[str] = None
    data: Optional[tuple[Mapping[str, str], ...]] = None

    def __post_init__(self):
        if self.data is not None:
            rows = tuple(dict(row) for row in self.data)
            key_sets = {tuple(row.keys()) for row in rows}
            if len(key_sets) > 1:
                raise ValidationError(
                    "data rows must share an identical ordered key set, "
                    f"got {sorted(key_sets)}"
                )
            object.__setattr__(self, "data", rows)


@dataclass(frozen=True)
class Entity:
    """One detected semantic element with derived geometry and schema weight.

    ``mid_point``, ``x_center``, ``y_center`` and ``weight`` are pure functions
    of ``pixel_coordinates`` and ``type``; use :func:`make_entity` so they stay
    consistent.
    """

    id: str
    type: ElementLabel
    confidence: float
    value: EntityValue
    pixel_coordinates: BBox
    mid_point: Point
    x_center: float
    y_center: float
    weight: int
    image_payload: Optional[str] = None

    def with_value(self, value: EntityValue) -> "Entity":
        return replace(self, value=value)

    def with_type(self, label: ElementLabel, schema: SchemaWeights) -> "Entity":
        """Relabel, recomputing the schema weight."""
        return replace(self, type=label, weight=schema.weight_of(label))


def make_entity(
    label: ElementLabel,
    confidence: float,
    bbox: BBox,
    value: EntityValue,
    schema: SchemaWeights,
    entity_id: Optional[str] = None,
    image_payload: Optional[str] = None,
) -> Entity:
    """Build an entity, deriving midpoint, centers, and weight.

    Caller-supplied ids are preserved for reproducibility; otherwise a random
    version-4 UUID is assigned.
    """
    label = ElementLabel(label)
    confidence = float(confidence)
    if not 0.0 <= confidence <= 1.0:
        raise ValidationError(f"confidence must be in [0,1], got {confidence}")
    if entity_id is not None and not entity_id:
        raise ValidationError("entity id must be a non-empty string")
    mid = midpoint(bbox)
    return Entity(
        id=entity_id if entity_id is not None else str(uuid.uuid4()),
        type=label,
        confidence=confidence,
        value=value,
        pixel_coordinates=bbox,
        mid_point=mid,
        x_center=mid.x,
        y_center=mid.y,
        weight=schema.weight_of(label),
        image_payload=image_payload,
    )


@dataclass(frozen=True)
class Group:
    """An ordered run of entity ids sharing one layout region."""

    type: GroupType
    ids: tuple[str, ...]
    pixel_coordinates: BBox
    mid_point: Point
    x_center: float
    y_center: float

    def __post_init__(self):
        if not self.ids:
            raise ValidationError("group must contain at least one entity id")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError(f"group ids contain duplicates: {self.ids}")
        object.__setattr__(self, "ids", tuple(self.ids))


def make_group(group_type: GroupType, members: Sequence[Entity]) -> Group:
    """Build a group over ``members`` in the given order; bbox is their union."""
    box = union_bbox([m.pixel_coordinates for m in members])
    mid = midpoint(box)
    return Group(
        type=GroupType(group_type),
        ids=tuple(m.id for m in members),
        pixel_coordinates=box,
        mid_point=mid,
        x_center=mid.x,
        y_center=mid.y,
    )


@dataclass(frozen=True)
class PageResult:
    """One assembled page. ``elements`` insertion order is the reading order."""

    page_number: int
    elements: Mapping[str, Entity]
    groups: tuple[Group, ...]
    non_groups: tuple[str, ...]
    skipped_images: tuple[str, ...]

    def __post_init__(self):
        if not isinstance(self.page_number, int) or self.page_number < 1:
            raise ValidationError(f"page_number must be a positive integer, got {self.page_number}")
        object.__setattr__(self, "elements", dict(self.elements))
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "non_groups", tuple(self.non_groups))
        object.__setattr__(self, "skipped_images", tuple(self.skipped_images))

        grouped = [eid for group in self.groups for eid in group.ids]
        placed = grouped + list(self.non_groups)
        if len(set(placed)) != len(placed):
            raise ValidationError(
                f"page {self.page_number}: ids appear more than once across groups/non_groups"
            )
        element_ids = set(self.elements)
        if set(placed) != element_ids:
            raise ValidationError(
                f"page {self.page_number}: groups and non_groups must partition the elements"
            )
        if element_ids & set(self.skipped_images):
            raise ValidationError(
                f"page {self.page_number}: skipped images must not appear among elements"
            )


@dataclass(frozen=True)
class DocumentResult:
    """Full assembly output for one document."""

    filename: str
    total_pages: int
    total_processed_pages: int
    total_failed_pages: int
    total_llm_calls: int
    metadata: Mapping[str, str]
    document_category: str
    pages: tuple[PageResult, ...]

    def __post_init__(self):
        object.__setattr__(self, "metadata", dict(self.metadata))
        object.__setattr__(self, "pages", tuple(self.pages))
        if self.total_processed_pages + self.total_failed_pages != self.total_pages:
            raise ValidationError(
                "page counters inconsistent: "
                f"{self.total_processed_pages} processed + {self.total_failed_pages} failed "
                f"!= {self.total_pages} total"
            )
        numbers = [page.page_number for page in self.pages]
        if numbers != sorted(numbers) or len(set(numbers)) != len(numbers):
            raise ValidationError(f"pages must be sorted by unique page_number, got {numbers}")


# ---------------------------------------------------------------------------
# JSON serialization (stable field order; optional fields omitted when absent)
# ---------------------------------------------------------------------------


def _bbox_to_dict(box: BBox) -> dict[str, float]:
    return {"left": box.left, "top": box.top, "right": box.right, "bottom": box.bottom}


def _point_to_dict(point: Point) -> dict[str, float]:
    return {"x": point.x, "y": point.y}


def entity_value_to_dict(value: EntityValue) -> dict[str, Any]:
    out: dict[str, Any] = {"text": value.text}
    if value.title is not None:
        out["title"] = value.title
    if value.summary is not None:
        out["summary"] = value.summary
    if value.data is not None:
        out["data"] = [dict(row) for row in value.data]
    return out


def entity_to_dict(entity: Entity) -> dict[str, Any]:
    out: dict[str, Any] = {
        "id": entity.id,
        "type": entity.type.value,
        "confidence": entity.confidence,
        "value": entity_value_to_dict(entity.value),
        "pixel_coordinates": _bbox_to_dict(entity.pixel_coordinates),
        "mid_point": _point_to_dict(entity.mid_point),
        "x_center": entity.x_center,
        "y_center": entity.y_center,
        "weight": entity.weight,
    }
    if entity.image_payload is not None:
        out["image_payload"] = entity.image_payload
    return out


def group_to_dict(group: Group) -> dict[str, Any]:
    return {
        "type": group.type.value,
        "ids": list(group.ids),
        "pixel_coordinates": _bbox_to_dict(group.pixel_coordinates),
        "mid_point": _point_to_dict(group.mid_point),
        "x_center": group.x_center,
        "y_center": group.y_center,
    }


def page_to_dict(page: PageResult) -> dict[str, Any]:
    return {
        "page_number": page.page_number,
        "elements": {eid: entity_to_dict(ent) for eid, ent in page.elements.items()},
        "groups": [group_to_dict(g) for g in page.groups],
        "non_groups": list(page.non_groups),
        "skipped_images": list(page.skipped_images),
    }


def document_to_dict(doc: DocumentResult) -> dict[str, Any]:
    return {
        "filename": doc.filename,
        "total_pages": doc.total_pages,
        "total_processed_pages": doc.total_processed_pages,
        "total_failed_pages": doc.total_failed_pages,
        "total_llm_calls": doc.total_llm_calls,
        "metadata": dict(doc.metadata),
        "document_category": doc.document_category,
        "pages": [page_to_dict(p) for p in doc.pages],
    }


def document_to_json(doc: DocumentResult) -> str:
    return json.dumps(document_to_dict(doc), indent=2, ensure_ascii=False) + "\n"


def _require(mapping: Mapping[str, Any], key: str, context: str) -> Any:
    if not isinstance(mapping, Mapping):
        raise ValidationError(f"{context}: expected an object")
    if key not in mapping:
        raise ValidationError(f"{context}: missing required field {key!r}")
    return mapping[key]


def _bbox_from_dict(raw: Mapping[str, Any], context: str) -> BBox:
    try:
        return BBox(
            left=_require(raw, "left", context),
            top=_require(raw, "top", context),
            right=_require(raw, "right", context),
            bottom=_require(raw, "bottom", context),
        )
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{context}: {exc}") from exc


def entity_from_dict(raw: Mapping[str, Any], context: str = "entity") -> Entity:
    value_raw = _require(raw, "value", context)
    data = value_raw.get("data")
    value = EntityValue(
        text=_require(value_raw, "text", f"{context}.value"),
        title=value_raw.get("title"),
        summary=value_raw.get("summary"),
        data=tuple(data) if data is not None else None,
    )
    bbox = _bbox_from_dict(_require(raw, "pixel_coordinates", context), f"{context}.pixel_coordinates")
    try:
        label = ElementLabel(_require(raw, "type", context))
    except ValueError as exc:
        raise ValidationError(f"{context}: unknown element label {raw.get('type')!r}") from exc
    weight = _require(raw, "weight", context)
    if not isinstance(weight, int) or weight < 1:
        raise ValidationError(f"{context}: weight must be a positive integer, got {weight!r}")
    confidence = _require(raw, "confidence", context)
    try:
        confidence = float(confidence)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{context}: confidence must be a number") from exc
    if not 0.0 <= confidence <= 1.0:
        raise ValidationError(f"{context}: confidence must be in [0,1], got {confidence}")

    mid = midpoint(bbox)
    stored_mid = _require(raw, "mid_point", context)
    stored = (
        float(_require(stored_mid, "x", f"{context}.mid_point")),
        float(_require(stored_mid, "y", f"{context}.mid_point")),
        float(_require(raw, "x_center", context)),
        float(_require(raw, "y_center", context)),
    )
    if stored != (mid.x, mid.y, mid.x, mid.y):
        raise ValidationError(
            f"{context}: stored midpoint/centers {stored} do not match geometry "
            f"({mid.x}, {mid.y})"
        )
    return Entity(
        id=str(_require(raw, "id", context)),
        type=label,
        confidence=confidence,
        value=value,
        pixel_coordinates=bbox,
        mid_point=mid,
        x_center=mid.x,
        y_center=mid.y,
        weight=weight,
        image_payload=raw.get("image_payload"),
    )


def group_from_dict(raw: Mapping[str, Any], elements: Mapping[str, Entity], context: str) -> Group:
    try:
        group_type = GroupType(_require(raw, "type", context))
    except ValueError as exc:
        raise ValidationError(f"{context}: unknown group type {raw.get('type')!r}") from exc
    ids = tuple(str(i) for i in _require(raw, "ids", context))
    missing = [i for i in ids if i not in elements]
    if missing:
        raise ValidationError(f"{context}: ids not present among page elements: {missing}")
    box = _bbox_from_dict(_require(raw, "pixel_coordinates", context), f"{context}.pixel_coordinates")
    expected = union_bbox([elements[i].pixel_coordinates for i in ids])
    if box != expected:
        raise ValidationError(
            f"{context}: stored bbox {box} is not the union of member boxes {expected}"
        )
    mid = midpoint(box)
    return Group(
        type=group_type,
        ids=ids,
        pixel_coordinates=box,
        mid_point=mid,
        x_center=mid.x,
        y_center=mid.y,
    )


def page_from_dict(raw: Mapping[str, Any], context: str = "page") -> PageResult:
    page_number = _require(raw, "page_number", context)
    elements_raw = _require(raw, "elements", context)
    if not isinstance(elements_raw, Mapping):
        raise ValidationError(f"{context}.elements: expected an object keyed by entity id")
    elements: dict[str, Entity] = {}
    for eid, ent_raw in elements_raw.items():
        entity = entity_from_dict(ent_raw, f"{context}.elements[{eid!r}]")
        if entity.id != eid:
            raise ValidationError(
                f"{context}.elements[{eid!r}]: key does not match entity id {entity.id!r}"
            )
        elements[eid] = entity
    groups = tuple(
        group_from_dict(g, elements, f"{context}.groups[{i}]")
        for i, g in enumerate(_require(raw, "groups", context))
    )
    try:
        return PageResult(
            page_number=page_number,
            elements=elements,
            groups=groups,
            non_groups=tuple(str(i) for i in _require(raw, "non_groups", context)),
            skipped_images=tuple(str(i) for i in _require(raw, "skipped_images", context)),
        )
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{context}: {exc}") from exc


def document_from_dict(raw: Mapping[str, Any]) -> DocumentResult:
    context = "document"
    metadata = _require(raw, "metadata", context)
    if not isinstance(metadata, Mapping) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise ValidationError(f"{context}.metadata: expected a string-to-string map")
    pages = tuple(
        page_from_dict(p, f"{context}.pages[{i}]")
        for i, p in enumerate(_require(raw, "pages", context))
    )
    try:
        return DocumentResult(
            filename=str(_require(raw, "filename", context)),
            total_pages=_require(raw, "total_pages", context),
            total_processed_pages=_require(raw, "total_processed_pages", context),
            total_failed_pages=_require(raw, "total_failed_pages", context),
            total_llm_calls=_require(raw, "total_llm_calls", context),
            metadata=metadata,
            document_category=str(_require(raw, "document_category", context)),
            pages=pages,
        )
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{context}: {exc}") from exc


def document_from_json(text: str) -> DocumentResult:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid document JSON: {exc}") from exc
    return document_from_dict(raw)
