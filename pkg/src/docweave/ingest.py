"""Detection-input parsing, confidence filtering, text normalization, gating.

The detection-input file is the serialized output of the upstream detectors,
with OCR/PDF text already bound to each detection::

    {
      "filename": "report.pdf",
      "metadata": {"page_height": "1000"},
      "pages": [
        {
          "page_number": 1,
          "element_detections": [
            {"label": "text", "confidence": 0.9, "bbox": [l, t, r, b],
             "text": "...", "image_payload": "...", "id": "optional"}
          ],
          "layout_detections": [
            {"label": "multi_column", "confidence": 0.8, "bbox": [l, t, r, b]}
          ],
          "full_page_text": "optional"
        }
      ]
    }

Layout detections below the layout threshold (default 0.20) and element
detections below the element threshold (default 0.30) are dropped; equality
keeps the detection. Unknown labels are rejected.
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

from .clients import (
    CategoryClassifier,
    EnrichmentClient,
    EnrichmentResult,
    UNCATEGORIZED,
    UsefulnessClassifier,
    UsefulnessVerdict,
)
from .errors import DetectionInputError
from .geometry import BBox
from .model import ElementLabel, Entity, EntityValue, LayoutLabel, SchemaWeights, make_entity

logger = logging.getLogger(__name__)

LAYOUT_CONFIDENCE_THRESHOLD = 0.20
ELEMENT_CONFIDENCE_THRESHOLD = 0.30

#: Entities shorter than this many characters are dropped unless exempt.
MIN_TEXT_LENGTH = 3
SMALL_TEXT_EXEMPT = frozenset({ElementLabel.TABLE, ElementLabel.IMAGE})

#: Labels cleaned with the title normalizer; everything else gets body rules.
TITLE_LIKE_LABELS = frozenset({ElementLabel.TITLE, ElementLabel.SECTION, ElementLabel.HEADER})

BULLET_GLYPHS = "•●▪‣·"
_BULLET_LINE = re.compile(rf"^[ \t]*[{BULLET_GLYPHS}][ \t]*")
_SPACE_RUN = re.compile(r"[ \t]+")


@dataclass(frozen=True)
class RawDetection:
    """One detector hit, element- or layout-level, as read from the input file."""

    label: str
    confidence: float
    bbox: BBox
    text: str = ""
    image_payload: Optional[str] = None
    id: Optional[str] = None


@dataclass(frozen=True)
class PageDetections:
    page_number: int
    element_detections: tuple[RawDetection, ...]
    layout_detections: tuple[RawDetection, ...]
    full_page_text: Optional[str] = None


@dataclass(frozen=True)
class DetectionInput:
    filename: str
    metadata: Mapping[str, str]
    pages: tuple[PageDetections, ...]


def _fail(context: str, message: str) -> None:
    raise DetectionInputError(f"{context}: {message}")


def _parse_detection(
    raw: Any, context: str, labels: type, threshold: float
) -> Optional[RawDetection]:
    if not isinstance(raw, Mapping):
        _fail(context, "detection must be an object")
    label_raw = raw.get("label")
    if not label_raw or not isinstance(label_raw, str):
        _fail(f"{context}.label", "label must be a non-empty string")
    try:
        labels(label_raw)
    except ValueError:
        kind = "layout" if labels is LayoutLabel else "element"
        _fail(f"{context}.label", f"unknown {kind} label {label_raw!r}")
    confidence = raw.get("confidence")
    if not isinstance(confidence, (int, float)) or isinstance(confidence, bool):
        _fail(f"{context}.confidence", "confidence must be a number")
    confidence = float(confidence)
    if not 0.0 <= confidence <= 1.0:
        _fail(f"{context}.confidence", f"confidence must be in [0,1], got {confidence}")
    bbox_raw = raw.get("bbox")
    if not isinstance(bbox_raw, Sequence) or len(bbox_raw) != 4:
        _fail(f"{context}.bbox", "bbox must be a [left, top, right, bottom] array")
    try:
        bbox = BBox(*bbox_raw)
    except (TypeError, ValueError) as exc:
        _fail(f"{context}.bbox", str(exc))
    text = raw.get("text", "")
    if text is None:
        text = ""
    if not isinstance(text, str):
        _fail(f"{context}.text", "text must be a string")
    entity_id = raw.get("id")
    if entity_id is not None and (not isinstance(entity_id, str) or not entity_id):
        _fail(f"{context}.id", "id must be a non-empty string when present")
    payload = raw.get("image_payload")
    if payload is not None and not isinstance(payload, str):
        _fail(f"{context}.image_payload", "image_payload must be a string when present")

    if confidence < threshold:
        return None
    return RawDetection(
        label=label_raw,
        confidence=confidence,
        bbox=bbox,
        text=text,
        image_payload=payload,
        id=entity_id,
    )


def load_detections(
    path: Union[str, Path],
    layout_threshold: float = LAYOUT_CONFIDENCE_THRESHOLD,
    element_threshold: float = ELEMENT_CONFIDENCE_THRESHOLD,
) -> DetectionInput:
    """Parse and validate a detection-input file, applying confidence thresholds."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DetectionInputError(f"{path}: cannot read file: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DetectionInputError(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(raw, Mapping):
        _fail(str(path), "top level must be an object")

    filename = raw.get("filename")
    if not isinstance(filename, str) or not filename:
        _fail(f"{path}: filename", "must be a non-empty string")
    metadata_raw = raw.get("metadata", {})
    if not isinstance(metadata_raw, Mapping) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata_raw.items()
    ):
        _fail(f"{path}: metadata", "must be a string-to-string map")
    pages_raw = raw.get("pages", [])
    if not isinstance(pages_raw, Sequence):
        _fail(f"{path}: pages", "must be an array")

    pages: list[PageDetections] = []
    seen_numbers: set[int] = set()
    seen_ids: set[str] = set()
    for page_index, page_raw in enumerate(pages_raw):
        context = f"{path}: pages[{page_index}]"
        if not isinstance(page_raw, Mapping):
            _fail(context, "page must be an object")
        number = page_raw.get("page_number")
        if not isinstance(number, int) or isinstance(number, bool) or number < 1:
            _fail(f"{context}.page_number", f"must be a positive integer, got {number!r}")
        if number in seen_numbers:
            _fail(f"{context}.page_number", f"duplicate page number {number}")
        seen_numbers.add(number)

        elements = []
        for det_index, det_raw in enumerate(page_raw.get("element_detections", [])):
            det_context = f"{context}.element_detections[{det_index}]"
            det = _parse_detection(det_raw, det_context, ElementLabel, element_threshold)
            if det is None:
                continue
            if det.id is not None:
                if det.id in seen_ids:
                    _fail(f"{det_context}.id", f"duplicate entity id {det.id!r}")
                seen_ids.add(det.id)
            elements.append(det)
        layouts = []
        for det_index, det_raw in enumerate(page_raw.get("layout_detections", [])):
            det = _parse_detection(
                det_raw,
                f"{context}.layout_detections[{det_index}]",
                LayoutLabel,
                layout_threshold,
            )
            if det is not None:
                layouts.append(det)

        full_text = page_raw.get("full_page_text")
        if full_text is not None and not isinstance(full_text, str):
            _fail(f"{context}.full_page_text", "must be a string when present")
        pages.append(
            PageDetections(
                page_number=number,
                element_detections=tuple(elements),
                layout_detections=tuple(layouts),
                full_page_text=full_text,
            )
        )
    return DetectionInput(filename=filename, metadata=dict(metadata_raw), pages=tuple(pages))


# ---------------------------------------------------------------------------
# Text normalization
# ---------------------------------------------------------------------------


def _is_punct(char: str) -> bool:
    return unicodedata.category(char)[0] in "PS"


def normalize_title(s: str) -> str:
    """Clean a title/section string.

    Control and format characters are stripped, runs of three or more
    identical punctuation characters collapse to a single one, and the result
    is trimmed. Idempotent.
    """
    kept = [c for c in s if unicodedata.category(c)[0] != "C"]
    out: list[str] = []
    i = 0
    while i < len(kept):
        j = i
        while j < len(kept) and kept[j] == kept[i]:
            j += 1
        run = j - i
        if run >= 3 and _is_punct(kept[i]):
            out.append(kept[i])
        else:
            out.extend(kept[i:j])
        i = j
    return "".join(out).strip()


def normalize_body(s: str) -> str:
    """Normalize body text: NFKC, standardized bullets, collapsed spacing.

    Bullet glyphs at line starts become ``- ``; runs of spaces/tabs collapse
    to one space; line structure is preserved. Idempotent.
    """
    s = unicodedata.normalize("NFKC", s)
    s = s.replace("\r\n", "\n").replace("\r", "\n")
    lines = []
    for line in s.split("\n"):
        line = _BULLET_LINE.sub("- ", line, count=1)
        line = _SPACE_RUN.sub(" ", line)
        lines.append(line)
    return "\n".join(lines)


def normalize_for_label(text: str, label: ElementLabel) -> str:
    if label in TITLE_LIKE_LABELS:
        return normalize_title(text)
    return normalize_body(text)


# ---------------------------------------------------------------------------
# Entity construction and filtering
# ---------------------------------------------------------------------------


def build_entities(
    detections: Sequence[RawDetection], schema: SchemaWeights
) -> list[Entity]:
    """Turn element detections into entities with normalized text."""
    entities = []
    for det in detections:
        label = ElementLabel(det.label)
        entities.append(
            make_entity(
                label=label,
                confidence=det.confidence,
                bbox=det.bbox,
                value=EntityValue(text=normalize_for_label(det.text, label)),
                schema=schema,
                entity_id=det.id,
                image_payload=det.image_payload,
            )
        )
    return entities


def filter_small_text(entities: Sequence[Entity]) -> list[Entity]:
    """Drop near-empty entities; tables and images are kept regardless."""
    return [
        e
        for e in entities
        if e.type in SMALL_TEXT_EXEMPT or len(e.value.text) >= MIN_TEXT_LENGTH
    ]


def _run_per_entity(targets, call, max_workers: int):
    """Invoke ``call`` once per entity; results keyed by id, order-independent."""
    if max_workers > 1 and len(targets) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = {e.id: pool.submit(call, e) for e in targets}
        results = {}
        for eid, future in futures.items():
            try:
                results[eid] = (future.result(), None)
            except Exception as exc:  # client errors fail open
                results[eid] = (None, exc)
        return results
    results = {}
    for e in targets:
        try:
            results[e.id] = (call(e), None)
        except Exception as exc:
            results[e.id] = (None, exc)
    return results


def gate_images(
    entities: Sequence[Entity],
    classifier: UsefulnessClassifier,
    max_workers: int = 1,
) -> tuple[list[Entity], list[str]]:
    """Classify image entities; useless ones are removed and their ids returned.

    Tables are never classified. A classifier failure keeps the entity
    (fail-open) and is logged. Verdicts are merged in entity-id order so the
    result does not depend on call completion order.
    """
    images = sorted((e for e in entities if e.type is ElementLabel.IMAGE), key=lambda e: e.id)
    results = _run_per_entity(images, classifier.classify, max_workers)

    skipped: set[str] = set()
    for image in images:
        verdict, error = results[image.id]
        if error is not None:
            logger.warning("usefulness classifier failed for %s, keeping entity: %s", image.id, error)
            continue
        if verdict is UsefulnessVerdict.USELESS:
            skipped.add(image.id)
    kept = [e for e in entities if e.id not in skipped]
    return kept, sorted(skipped)


def _merge_enrichment(entity: Entity, result: EnrichmentResult) -> Entity:
    value = entity.value
    text = value.text
    data = value.data
    if isinstance(result.text_or_data, str):
        if result.text_or_data:
            text = result.text_or_data
    elif result.text_or_data is not None:
        data = result.text_or_data
    return entity.with_value(
        EntityValue(
            text=text,
            title=value.title if result.title is None else result.title,
            summary=value.summary if result.summary is None else result.summary,
            data=data,
        )
    )


def enrich_entities(
    entities: Sequence[Entity],
    client: EnrichmentClient,
    max_workers: int = 1,
) -> tuple[list[Entity], int]:
    """Enrich every table and every remaining (useful) image.

    Returns the updated entities plus the number of attempted client calls;
    failed calls leave the entity's OCR-only value in place but still count.
    Geometry is never touched.
    """
    eligible = sorted(
        (e for e in entities if e.type in (ElementLabel.TABLE, ElementLabel.IMAGE)),
        key=lambda e: e.id,
    )
    results = _run_per_entity(eligible, client.enrich, max_workers)

    merged: dict[str, Entity] = {}
    calls = 0
    for entity in eligible:
        outcome, error = results[entity.id]
        calls += 1
        if error is not None:
            logger.warning("enrichment failed for %s, keeping OCR value: %s", entity.id, error)
            continue
        merged[entity.id] = _merge_enrichment(entity, outcome)
    return [merged.get(e.id, e) for e in entities], calls


def classify_document(full_text: str, classifier: CategoryClassifier) -> str:
    """Assign a document category; any classifier failure maps to the default."""
    try:
        return classifier.classify(full_text)
    except Exception as exc:
        logger.warning("category classifier failed, using %r: %s", UNCATEGORIZED, exc)
        return UNCATEGORIZED
