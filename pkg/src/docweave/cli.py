"""Command-line interface: ``parse``, ``export``, and ``eval``.

Exit codes: 0 success, 1 partial failure (at least one document wholly
failed), 2 invalid usage.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import export as export_mod
from .errors import DocweaveError, ValidationError
from .metrics import evaluate
from .model import document_from_json
from .pipeline import (
    FORMATS,
    PipelineConfig,
    config_from_mapping,
    export_document,
    run_pipeline,
)


def _parse_formats(raw: str) -> tuple[str, ...]:
    formats = tuple(f.strip() for f in raw.split(",") if f.strip())
    unknown = [f for f in formats if f not in FORMATS]
    if unknown:
        raise click.UsageError(f"unknown formats: {', '.join(unknown)}")
    return formats


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    """Assemble detection results into reading-ordered documents and score them."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.argument("inputs", nargs=-1, required=True, type=click.Path(path_type=Path))
@click.option("-o", "--output-dir", type=click.Path(path_type=Path), default=Path("out"), show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), help="JSON config file; flags override it.")
@click.option("--formats", default=None, help=f"Comma-separated subset of: {', '.join(FORMATS)}.")
@click.option("--layout-threshold", type=float, default=None, help="Layout confidence cutoff (default 0.20).")
@click.option("--element-threshold", type=float, default=None, help="Element confidence cutoff (default 0.30).")
@click.option("--image-gate/--no-image-gate", "skip_images", default=None, help="Run the image usefulness gate (default on).")
@click.option("--insights/--skip-insights", "insights", default=None, help="Call the enrichment client for tables and useful images (default off).")
@click.option("--skip-headers-footers", is_flag=True, default=False, help="Omit page headers/footers from Markdown.")
@click.option("--eps", type=float, default=None, help="DBSCAN eps for multi-column clustering (default 0.3).")
@click.option("--min-samples", type=int, default=None, help="DBSCAN min_samples (default 2).")
@click.option("--angle-threshold", type=float, default=None, help="Row-order swap angle in degrees (default 50).")
@click.option("--fuzzy-threshold", type=int, default=None, help="Header/footer match ratio, strict > (default 95).")
@click.option("--header-top-limit", type=float, default=None, help="Pixels from the top within which headers are expected (default 100).")
@click.option("--usefulness-fixture", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--enrichment-fixture", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--category-fixture", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("-w", "--workers", type=int, default=None, help="Concurrent pages/exporters (default 1).")
def parse(
    inputs,
    output_dir,
    config_path,
    formats,
    layout_threshold,
    element_threshold,
    skip_images,
    insights,
    skip_headers_footers,
    eps,
    min_samples,
    angle_threshold,
    fuzzy_threshold,
    header_top_limit,
    usefulness_fixture,
    enrichment_fixture,
    category_fixture,
    workers,
):
    """Run the full pipeline over detection-input files."""
    file_values = {}
    if config_path is not None:
        try:
            file_values = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise click.UsageError(f"{config_path}: invalid config JSON: {exc}")

    assembly_defaults = file_values.get("assembly", {})
    cluster_kwargs = dict(assembly_defaults.get("cluster", {}))
    row_kwargs = dict(assembly_defaults.get("row", {}))
    hf_kwargs = dict(assembly_defaults.get("header_footer", {}))
    if eps is not None:
        cluster_kwargs["eps"] = eps
    if min_samples is not None:
        cluster_kwargs["min_samples"] = min_samples
    if angle_threshold is not None:
        row_kwargs["angle_threshold_degrees"] = angle_threshold
    if fuzzy_threshold is not None:
        hf_kwargs["fuzzy_threshold"] = fuzzy_threshold
    if header_top_limit is not None:
        hf_kwargs["header_top_limit"] = header_top_limit
    file_values["assembly"] = {
        "cluster": cluster_kwargs,
        "row": row_kwargs,
        "header_footer": hf_kwargs,
    }

    try:
        config = config_from_mapping(
            file_values,
            inputs=tuple(inputs),
            output_dir=output_dir,
            formats=_parse_formats(formats) if formats is not None else None,
            layout_threshold=layout_threshold,
            element_threshold=element_threshold,
            skip_images=skip_images,
            skip_insights=None if insights is None else not insights,
            skip_headers_footers=skip_headers_footers or None,
            usefulness_fixture=usefulness_fixture,
            enrichment_fixture=enrichment_fixture,
            category_fixture=category_fixture,
            workers=workers,
        )
    except (ValidationError, TypeError, ValueError) as exc:
        raise click.UsageError(str(exc))

    try:
        outcomes = run_pipeline(config)
    except ValidationError as exc:  # bad client fixture files
        raise click.UsageError(str(exc))
    failed = 0
    for outcome in outcomes:
        if outcome.failed:
            failed += 1
            click.echo(f"FAILED {outcome.input_path}: {outcome.error or 'no page assembled'}", err=True)
        else:
            doc = outcome.result
            click.echo(
                f"{outcome.input_path}: {doc.total_processed_pages}/{doc.total_pages} pages, "
                f"{len(outcome.written)} files written"
            )
    sys.exit(1 if failed else 0)


@main.command("export")
@click.argument("json_path", type=click.Path(exists=True, path_type=Path))
@click.option("-o", "--output-dir", type=click.Path(path_type=Path), default=Path("out"), show_default=True)
@click.option("--formats", default="markdown,chunks,graph,dpbench", show_default=True)
@click.option("--skip-headers-footers", is_flag=True, default=False)
@click.option("-w", "--workers", type=int, default=1, show_default=True)
def export_command(json_path: Path, output_dir: Path, formats: str, skip_headers_footers: bool, workers: int):
    """Re-run exporters over an existing document-result JSON file."""
    try:
        doc = document_from_json(json_path.read_text(encoding="utf-8"))
    except ValidationError as exc:
        click.echo(f"schema error in {json_path}: {exc}", err=True)
        sys.exit(1)
    written = export_document(
        doc,
        output_dir,
        json_path.stem,
        _parse_formats(formats),
        skip_headers_footers=skip_headers_footers,
        workers=workers,
    )
    for path in written:
        click.echo(str(path))


@main.command("eval")
@click.argument("reference", type=click.Path(path_type=Path))
@click.argument("prediction", type=click.Path(path_type=Path))
@click.option("--mode", type=click.Choice(["layout", "table"]), required=True)
@click.option("--report", "report_path", type=click.Path(path_type=Path), default=None, help="Write the full report JSON here.")
def eval_command(reference: Path, prediction: Path, mode: str, report_path):
    """Score prediction files against reference files (NID or TEDS/TEDS-S)."""
    try:
        report = evaluate(reference, prediction, mode)
    except DocweaveError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    click.echo(report.summary_text())
    if report_path is not None:
        from .pipeline import write_atomic

        write_atomic(report_path, json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n")
        summary_path = report_path.with_suffix(".txt")
        write_atomic(summary_path, report.summary_text() + "\n")
        click.echo(f"report written to {report_path} and {summary_path}")


if __name__ == "__main__":
    main()
