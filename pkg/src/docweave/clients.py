"""Pluggable classifier and enrichment clients with deterministic stubs.

Three interfaces mirror the external services the pipeline can call:

* usefulness classifier — decides whether an image is worth keeping;
* enrichment client — returns title/summary/structured content for tables
  and useful images;
* category classifier — assigns a document-level category string.

Stub implementations are deterministic and dependency-free so the pipeline is
hermetic by default. Fixture-backed clients replay canned responses from JSON
files (formats documented below and in the README). A live HTTP enrichment
endpoint can be selected with the ``DOCWEAVE_ENRICHMENT_URL`` environment
variable.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional, Protocol, Sequence, Union

from .errors import ValidationError
from .model import Entity

ENRICHMENT_URL_ENV = "DOCWEAVE_ENRICHMENT_URL"

UNCATEGORIZED = "uncategorized"


class UsefulnessVerdict(str, Enum):
    USEFUL = "useful"
    USELESS = "useless"


@dataclass(frozen=True)
class EnrichmentResult:
    """Response record from the enrichment service.

    ``text_or_data`` is a replacement text string for images, or a list of row
    records (field name -> cell string) for tables. A successful enrichment
    carries at least one field.
    """

    title: Optional[str] = None
    summary: Optional[str] = None
    text_or_data: Union[str, tuple[Mapping[str, str], ...], None] = None

    def __post_init__(self):
        if self.title is None and self.summary is None and self.text_or_data is None:
            raise ValidationError("enrichment result must carry at least one field")
        if isinstance(self.text_or_data, Sequence) and not isinstance(self.text_or_data, str):
            object.__setattr__(
                self, "text_or_data", tuple(dict(row) for row in self.text_or_data)
            )


def enrichment_result_from_record(record: Mapping[str, Any]) -> EnrichmentResult:
    """Build an EnrichmentResult from a fixture/HTTP response record.

    Recognized keys: ``title``, ``summary``, ``text`` (string) and ``data``
    (list of row records). ``data`` wins when both ``text`` and ``data`` are
    present.
    """
    if not isinstance(record, Mapping):
        raise ValidationError(f"enrichment record must be an object, got {type(record).__name__}")
    text_or_data: Union[str, tuple, None] = None
    if record.get("data") is not None:
        rows = record["data"]
        if not isinstance(rows, Sequence) or isinstance(rows, str):
            raise ValidationError("enrichment 'data' must be a list of row records")
        text_or_data = tuple(
            {str(k): str(v) for k, v in row.items()} for row in rows
        )
    elif record.get("text") is not None:
        text_or_data = str(record["text"])
    return EnrichmentResult(
        title=None if record.get("title") is None else str(record["title"]),
        summary=None if record.get("summary") is None else str(record["summary"]),
        text_or_data=text_or_data,
    )


def load_fixture_json(path: Union[str, Path]) -> Mapping[str, Any]:
    """Read a client fixture file, mapping failures to ValidationError."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read fixture: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid fixture JSON: {exc}") from exc
    if not isinstance(raw, Mapping):
        raise ValidationError(f"{path}: fixture must be a JSON object")
    return raw


class UsefulnessClassifier(Protocol):
    def classify(self, entity: Entity) -> UsefulnessVerdict: ...


class EnrichmentClient(Protocol):
    def enrich(self, entity: Entity) -> EnrichmentResult: ...


class CategoryClassifier(Protocol):
    def classify(self, text: str) -> str: ...


class StubUsefulnessClassifier:
    """Deterministic stand-in for the image classifier.

    Classifies every image with ``default`` unless an explicit per-id verdict
    is given.
    """

    def __init__(
        self,
        default: UsefulnessVerdict = UsefulnessVerdict.USEFUL,
        overrides: Optional[Mapping[str, UsefulnessVerdict]] = None,
    ):
        self.default = UsefulnessVerdict(default)
        self.overrides = {k: UsefulnessVerdict(v) for k, v in (overrides or {}).items()}

    def classify(self, entity: Entity) -> UsefulnessVerdict:
        return self.overrides.get(entity.id, self.default)


class FixtureUsefulnessClassifier:
    """Replays verdicts from a JSON fixture.

    Fixture format::

        {"verdicts": {"<entity id>": "useful" | "useless", ...},
         "default": "useful"}
    """

    def __init__(self, path: Union[str, Path]):
        raw = load_fixture_json(path)
        self.verdicts = {
            str(k): UsefulnessVerdict(v) for k, v in raw.get("verdicts", {}).items()
        }
        self.default = UsefulnessVerdict(raw["default"]) if "default" in raw else None

    def classify(self, entity: Entity) -> UsefulnessVerdict:
        if entity.id in self.verdicts:
            return self.verdicts[entity.id]
        if self.default is not None:
            return self.default
        raise KeyError(f"no usefulness verdict for entity {entity.id!r}")


class StubEnrichmentClient:
    """Identity enrichment: echoes the entity's existing text, changing nothing."""

    def enrich(self, entity: Entity) -> EnrichmentResult:
        return EnrichmentResult(text_or_data=entity.value.text)


class FixtureEnrichmentClient:
    """Replays enrichment responses from a JSON fixture.

    Fixture format::

        {"responses": {"<entity id>": {"title": ..., "summary": ...,
                                       "text": ... | "data": [...]}, ...}}

    A missing entity id raises, which the pipeline treats as a failed call
    (the entity keeps its OCR-only value).
    """

    def __init__(self, path: Union[str, Path]):
        raw = load_fixture_json(path)
        self.responses = {str(k): v for k, v in raw.get("responses", {}).items()}

    def enrich(self, entity: Entity) -> EnrichmentResult:
        if entity.id not in self.responses:
            raise KeyError(f"no enrichment response for entity {entity.id!r}")
        return enrichment_result_from_record(self.responses[entity.id])


class HttpEnrichmentClient:
    """POSTs entity payloads to a live enrichment endpoint.

    The request body is ``{"id", "type", "text", "image_payload"}``; the
    response must be a JSON record in the fixture format above.
    """

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def enrich(self, entity: Entity) -> EnrichmentResult:
        import requests

        response = requests.post(
            self.url,
            json={
                "id": entity.id,
                "type": entity.type.value,
                "text": entity.value.text,
                "image_payload": entity.image_payload,
            },
            timeout=self.timeout,
        )
        response.raise_for_status()
        return enrichment_result_from_record(response.json())


class StubCategoryClassifier:
    """Constant document-category classifier."""

    def __init__(self, category: str = UNCATEGORIZED):
        self.category = category

    def classify(self, text: str) -> str:
        return self.category


def text_digest(text: str) -> str:
    """Key used by the category fixture: sha256 of the UTF-8 text."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class FixtureCategoryClassifier:
    """Replays categories from a JSON fixture keyed by sha256(text).

    Fixture format::

        {"categories": {"<sha256 hexdigest>": "<category>", ...},
         "default": "uncategorized"}
    """

    def __init__(self, path: Union[str, Path]):
        raw = load_fixture_json(path)
        self.categories = {str(k): str(v) for k, v in raw.get("categories", {}).items()}
        self.default = str(raw.get("default", UNCATEGORIZED))

    def classify(self, text: str) -> str:
        return self.categories.get(text_digest(text), self.default)


def resolve_enrichment_client(
    fixture_path: Optional[Union[str, Path]] = None,
) -> EnrichmentClient:
    """Pick the enrichment backend: fixture file, env-configured endpoint, or stub."""
    if fixture_path is not None:
        return FixtureEnrichmentClient(fixture_path)
    url = os.environ.get(ENRICHMENT_URL_ENV)
    if url:
        return HttpEnrichmentClient(url)
    return StubEnrichmentClient()

