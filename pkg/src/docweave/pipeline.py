"""End-to-end orchestration: ingest, per-page assembly, correction, export.

Pages of one document are independent and may be processed concurrently;
header/footer correction is a whole-document barrier that runs after every
page has assembled. Exporters are pure and also run concurrently. Output files
are written atomically (temp file + rename), so an interrupted run never
leaves a truncated file at a final path.
"""

from __future__ import annotations

import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from . import export as export_mod
from .assembly import AssemblyParams, assemble_page, correct_headers_footers
from .clients import (
    CategoryClassifier,
    EnrichmentClient,
    FixtureCategoryClassifier,
    FixtureUsefulnessClassifier,
    StubCategoryClassifier,
    StubUsefulnessClassifier,
    UsefulnessClassifier,
    resolve_enrichment_client,
)
from .errors import DocweaveError, ValidationError
from .ingest import (
    DetectionInput,
    ELEMENT_CONFIDENCE_THRESHOLD,
    LAYOUT_CONFIDENCE_THRESHOLD,
    PageDetections,
    build_entities,
    classify_document,
    enrich_entities,
    filter_small_text,
    gate_images,
    load_detections,
)
from .model import (
    DocumentResult,
    PageResult,
    SchemaWeights,
    document_to_json,
)

logger = logging.getLogger(__name__)

FORMATS = ("json", "markdown", "chunks", "graph", "dpbench")

_SUFFIXES = {
    "json": ".json",
    "markdown": ".md",
    "chunks": ".chunks.jsonl",
    "graph": ".graph.json",
    "dpbench": ".dpbench.json",
}


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a pipeline run needs; flags mirror these fields."""

    inputs: tuple[Path, ...]
    output_dir: Path
    layout_threshold: float = LAYOUT_CONFIDENCE_THRESHOLD
    element_threshold: float = ELEMENT_CONFIDENCE_THRESHOLD
    skip_images: bool = True  # when True the usefulness gate runs
    skip_insights: bool = True  # when True no enrichment calls are made
    skip_headers_footers: bool = False
    formats: tuple[str, ...] = FORMATS
    assembly: AssemblyParams = field(default_factory=AssemblyParams)
    weight_overrides: Mapping[str, int] = field(default_factory=dict)
    usefulness_fixture: Optional[Path] = None
    enrichment_fixture: Optional[Path] = None
    category_fixture: Optional[Path] = None
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(Path(p) for p in self.inputs))
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        object.__setattr__(self, "formats", tuple(self.formats))
        for name in ("layout_threshold", "element_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must be in [0,1], got {value}")
        if not self.formats:
            raise ValidationError("at least one output format is required")
        unknown = [f for f in self.formats if f not in FORMATS]
        if unknown:
            raise ValidationError(f"unknown output formats: {unknown}")
        if self.workers < 1:
            raise ValidationError(f"worker count must be >= 1, got {self.workers}")


@dataclass
class DocumentOutcome:
    input_path: Path
    result: Optional[DocumentResult] = None
    written: list[Path] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        """A document wholly failed: unreadable input or every page failed."""
        if self.error is not None:
            return True
        doc = self.result
        return doc is not None and doc.total_pages > 0 and doc.total_processed_pages == 0


def write_atomic(path: Path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see partials."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def render_format(doc: DocumentResult, fmt: str, skip_headers_footers: bool) -> str:
    if fmt == "json":
        return document_to_json(doc)
    if fmt == "markdown":
        return export_mod.to_markdown(doc, skip_headers_footers=skip_headers_footers)
    if fmt == "chunks":
        return export_mod.chunks_to_jsonl(export_mod.to_chunks(doc))
    if fmt == "graph":
        return export_mod.graph_to_json(*export_mod.to_graph(doc))
    if fmt == "dpbench":
        return export_mod.dpbench_to_json(doc, export_mod.to_dpbench(doc))
    raise ValidationError(f"unknown output format {fmt!r}")


def export_document(
    doc: DocumentResult,
    output_dir: Path,
    stem: str,
    formats: Sequence[str],
    skip_headers_footers: bool = False,
    workers: int = 1,
) -> list[Path]:
    """Render and atomically write the selected formats, concurrently when asked."""
    formats = list(formats)

    def render(fmt: str) -> str:
        return render_format(doc, fmt, skip_headers_footers)

    if workers > 1 and len(formats) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rendered = dict(zip(formats, pool.map(render, formats)))
    else:
        rendered = {fmt: render(fmt) for fmt in formats}

    written = []
    for fmt in sorted(formats):  # merge point ordered by format name
        target = output_dir / f"{stem}{_SUFFIXES[fmt]}"
        write_atomic(target, rendered[fmt])
        written.append(target)
    return written


@dataclass
class _PageOutcome:
    page_number: int
    result: Optional[PageResult] = None
    llm_calls: int = 0


class _Clients:
    def __init__(self, config: PipelineConfig):
        self.usefulness: UsefulnessClassifier = (
            FixtureUsefulnessClassifier(config.usefulness_fixture)
            if config.usefulness_fixture
            else StubUsefulnessClassifier()
        )
        self.enrichment: EnrichmentClient = resolve_enrichment_client(config.enrichment_fixture)
        self.category: CategoryClassifier = (
            FixtureCategoryClassifier(config.category_fixture)
            if config.category_fixture
            else StubCategoryClassifier()
        )


def _process_page(
    page: PageDetections,
    schema: SchemaWeights,
    config: PipelineConfig,
    clients: _Clients,
) -> _PageOutcome:
    outcome = _PageOutcome(page_number=page.page_number)
    try:
        entities = filter_small_text(build_entities(page.element_detections, schema))
        skipped_ids: list[str] = []
        if config.skip_images:
            entities, skipped_ids = gate_images(
                entities, clients.usefulness, max_workers=config.workers
            )
        if not config.skip_insights:
            entities, outcome.llm_calls = enrich_entities(
                entities, clients.enrichment, max_workers=config.workers
            )
        outcome.result = assemble_page(
            page_number=page.page_number,
            layout_detections=page.layout_detections,
            entities=entities,
            params=config.assembly,
            skipped_image_ids=skipped_ids,
        )
    except Exception:
        logger.exception("page %d failed to assemble", page.page_number)
    return outcome


def _document_text(detections: DetectionInput, pages: Sequence[PageResult]) -> str:
    by_number = {p.page_number: p for p in pages}
    page_texts = []
    for page in detections.pages:
        if page.full_page_text is not None:
            page_texts.append(page.full_page_text)
            continue
        assembled = by_number.get(page.page_number)
        if assembled is None:
            continue
        texts = [e.value.text for e in assembled.elements.values() if e.value.text]
        page_texts.append("\n".join(texts))
    return "\n\n".join(page_texts)


def _page_heights(detections: DetectionInput) -> dict[int, float]:
    raw = detections.metadata.get("page_height")
    if raw is None:
        return {}
    try:
        height = float(raw)
    except ValueError:
        logger.warning("ignoring non-numeric page_height metadata %r", raw)
        return {}
    return {page.page_number: height for page in detections.pages}


def process_document(path: Path, config: PipelineConfig, clients: Optional[_Clients] = None) -> DocumentOutcome:
    """Run the full pipeline for one detection-input file."""
    outcome = DocumentOutcome(input_path=path)
    clients = clients or _Clients(config)
    try:
        detections = load_detections(
            path,
            layout_threshold=config.layout_threshold,
            element_threshold=config.element_threshold,
        )
    except DocweaveError as exc:
        outcome.error = str(exc)
        logger.error("%s", exc)
        return outcome

    schema = SchemaWeights.with_overrides(config.weight_overrides)
    if config.workers > 1 and len(detections.pages) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            page_outcomes = list(
                pool.map(lambda p: _process_page(p, schema, config, clients), detections.pages)
            )
    else:
        page_outcomes = [_process_page(p, schema, config, clients) for p in detections.pages]
    page_outcomes.sort(key=lambda o: o.page_number)

    assembled = [o.result for o in page_outcomes if o.result is not None]
    corrected = correct_headers_footers(
        assembled,
        config.assembly.header_footer,
        schema,
        page_heights=_page_heights(detections),
    )
    total_pages = len(detections.pages)
    processed = len(corrected)
    category = classify_document(_document_text(detections, corrected), clients.category)
    outcome.result = DocumentResult(
        filename=detections.filename,
        total_pages=total_pages,
        total_processed_pages=processed,
        total_failed_pages=total_pages - processed,
        total_llm_calls=sum(o.llm_calls for o in page_outcomes),
        metadata=detections.metadata,
        document_category=category,
        pages=tuple(corrected),
    )
    try:
        outcome.written = export_document(
            outcome.result,
            config.output_dir,
            path.stem,
            config.formats,
            skip_headers_footers=config.skip_headers_footers,
            workers=config.workers,
        )
    except Exception as exc:
        outcome.error = f"export failed: {exc}"
        logger.exception("export failed for %s", path)
    return outcome


def run_pipeline(config: PipelineConfig) -> list[DocumentOutcome]:
    """Process every input file; per-file failures do not stop the run."""
    clients = _Clients(config)
    return [process_document(path, config, clients) for path in config.inputs]


def config_from_mapping(raw: Mapping[str, Any], **overrides: Any) -> PipelineConfig:
    """Build a PipelineConfig from a config-file mapping plus flag overrides.

    Recognized keys mirror the PipelineConfig fields; ``assembly`` accepts
    ``{"cluster": {"eps", "min_samples"}, "row": {"angle_threshold_degrees"},
    "header_footer": {"fuzzy_threshold", "header_top_limit"}}``.
    """
    from .assembly import ClusterParams, HeaderFooterParams, RowOrderParams

    known = {
        "inputs",
        "output_dir",
        "layout_threshold",
        "element_threshold",
        "skip_images",
        "skip_insights",
        "skip_headers_footers",
        "formats",
        "weight_overrides",
        "usefulness_fixture",
        "enrichment_fixture",
        "category_fixture",
        "workers",
    }
    unknown = set(raw) - known - {"assembly"}
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")

    values: dict[str, Any] = {k: v for k, v in raw.items() if k in known}
    assembly_raw = raw.get("assembly", {})
    assembly = AssemblyParams(
        cluster=ClusterParams(**assembly_raw.get("cluster", {})),
        row=RowOrderParams(**assembly_raw.get("row", {})),
        header_footer=HeaderFooterParams(**assembly_raw.get("header_footer", {})),
    )
    values["assembly"] = assembly
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    for key in ("usefulness_fixture", "enrichment_fixture", "category_fixture"):
        if values.get(key) is not None:
            values[key] = Path(values[key])
    return PipelineConfig(**values)
