import json

import pytest
from click.testing import CliRunner

from conftest import FIXTURE_DIR, write_detection_file
from docweave.cli import main
from docweave.errors import ValidationError
from docweave.model import document_from_json
from docweave.pipeline import (
    PipelineConfig,
    config_from_mapping,
    process_document,
    run_pipeline,
    write_atomic,
)


def minimal_input(tmp_path, name="doc.json", pages=None):
    payload = {
        "filename": "doc.pdf",
        "metadata": {},
        "pages": pages
        if pages is not None
        else [
            {
                "page_number": 1,
                "element_detections": [
                    {
                        "id": "t1",
                        "label": "text",
                        "confidence": 0.9,
                        "bbox": [0, 100, 200, 150],
                        "text": "first paragraph",
                    },
                    {
                        "id": "t2",
                        "label": "title",
                        "confidence": 0.95,
                        "bbox": [0, 10, 200, 60],
                        "text": "A Title",
                    },
                ],
                "layout_detections": [],
            }
        ],
    }
    return write_detection_file(tmp_path / name, payload)


class TestRunPipeline:
    def test_single_format_single_file(self, tmp_path):
        path = minimal_input(tmp_path)
        config = PipelineConfig(inputs=(path,), output_dir=tmp_path / "out", formats=("json",))
        (outcome,) = run_pipeline(config)
        assert outcome.error is None
        assert [p.name for p in outcome.written] == ["doc.json"]

    def test_skip_insights_means_zero_calls(self, tmp_path):
        config = PipelineConfig(
            inputs=(FIXTURE_DIR / "report.json",),
            output_dir=tmp_path / "out",
            skip_insights=True,
            usefulness_fixture=FIXTURE_DIR / "usefulness.json",
        )
        (outcome,) = run_pipeline(config)
        assert outcome.result.total_llm_calls == 0

    def test_gate_off_keeps_decorative_image(self, tmp_path):
        config = PipelineConfig(
            inputs=(FIXTURE_DIR / "report.json",),
            output_dir=tmp_path / "out",
            skip_images=False,
        )
        (outcome,) = run_pipeline(config)
        page2 = outcome.result.pages[1]
        assert "p2-decor" in page2.elements
        assert page2.skipped_images == ()

    def test_unreadable_input_isolated(self, tmp_path):
        good = minimal_input(tmp_path, "good.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{broken", encoding="utf-8")
        config = PipelineConfig(inputs=(bad, good), output_dir=tmp_path / "out", formats=("json",))
        outcomes = run_pipeline(config)
        assert outcomes[0].failed and outcomes[0].error
        assert not outcomes[1].failed

    def test_counter_consistency(self, tmp_path):
        config = PipelineConfig(
            inputs=(FIXTURE_DIR / "report.json",), output_dir=tmp_path / "out", formats=("json",)
        )
        (outcome,) = run_pipeline(config)
        doc = outcome.result
        assert doc.total_processed_pages + doc.total_failed_pages == doc.total_pages

    def test_worker_counts_give_identical_outputs(self, tmp_path):
        results = {}
        for workers in (1, 8):
            out = tmp_path / f"w{workers}"
            config = PipelineConfig(
                inputs=(FIXTURE_DIR / "report.json",),
                output_dir=out,
                skip_insights=False,
                usefulness_fixture=FIXTURE_DIR / "usefulness.json",
                enrichment_fixture=FIXTURE_DIR / "enrichment.json",
                workers=workers,
            )
            run_pipeline(config)
            results[workers] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
        assert results[1] == results[8]

    def test_header_footer_correction_applied(self, tmp_path):
        pages = []
        for n in (1, 2, 3):
            detections = [
                {
                    "id": f"b{n}",
                    "label": "text",
                    "confidence": 0.9,
                    "bbox": [0, 300, 400, 360],
                    "text": f"body of page {n}",
                }
            ]
            label = "page_header" if n < 3 else "text"
            detections.append(
                {
                    "id": f"h{n}",
                    "label": label,
                    "confidence": 0.9,
                    "bbox": [100, 10, 500, 40],
                    "text": "Repeated Running Header",
                }
            )
            pages.append(
                {"page_number": n, "element_detections": detections, "layout_detections": []}
            )
        path = minimal_input(tmp_path, "hf.json", pages=pages)
        config = PipelineConfig(inputs=(path,), output_dir=tmp_path / "out", formats=("json",))
        (outcome,) = run_pipeline(config)
        page3 = outcome.result.pages[2]
        assert page3.elements["h3"].type.value == "page_header"

    def test_document_category_from_fixture(self, tmp_path):
        from docweave.clients import text_digest

        path = minimal_input(tmp_path)
        doc_text = "A Title\nfirst paragraph"
        fixture = tmp_path / "cat.json"
        fixture.write_text(
            json.dumps({"categories": {text_digest(doc_text): "technical"}}), encoding="utf-8"
        )
        config = PipelineConfig(
            inputs=(path,),
            output_dir=tmp_path / "out",
            formats=("json",),
            category_fixture=fixture,
        )
        (outcome,) = run_pipeline(config)
        assert outcome.result.document_category == "technical"

    def test_failed_page_isolated(self, tmp_path, monkeypatch):
        pages = [
            {
                "page_number": n,
                "element_detections": [
                    {
                        "id": f"t{n}",
                        "label": "text",
                        "confidence": 0.9,
                        "bbox": [0, 100, 200, 150],
                        "text": f"page {n} body",
                    }
                ],
                "layout_detections": [],
            }
            for n in (1, 2, 3)
        ]
        path = minimal_input(tmp_path, "multi.json", pages=pages)

        import docweave.pipeline as pipeline_mod

        real_assemble = pipeline_mod.assemble_page

        def flaky(page_number, *args, **kwargs):
            if page_number == 2:
                raise RuntimeError("synthetic page failure")
            return real_assemble(page_number, *args, **kwargs)

        monkeypatch.setattr(pipeline_mod, "assemble_page", flaky)
        config = PipelineConfig(inputs=(path,), output_dir=tmp_path / "out", formats=("json",))
        (outcome,) = run_pipeline(config)
        doc = outcome.result
        assert doc.total_pages == 3
        assert doc.total_failed_pages == 1
        assert doc.total_processed_pages == 2
        assert [p.page_number for p in doc.pages] == [1, 3]
        assert not outcome.failed

    def test_full_page_text_feeds_category(self, tmp_path):
        from docweave.clients import text_digest

        payload = {
            "filename": "doc.pdf",
            "metadata": {},
            "pages": [
                {
                    "page_number": 1,
                    "element_detections": [
                        {
                            "id": "t1",
                            "label": "text",
                            "confidence": 0.9,
                            "bbox": [0, 0, 10, 10],
                            "text": "entity text",
                        }
                    ],
                    "layout_detections": [],
                    "full_page_text": "the raw page text",
                }
            ],
        }
        path = write_detection_file(tmp_path / "doc.json", payload)
        fixture = tmp_path / "cat.json"
        fixture.write_text(
            json.dumps({"categories": {text_digest("the raw page text"): "legal"}}),
            encoding="utf-8",
        )
        config = PipelineConfig(
            inputs=(path,),
            output_dir=tmp_path / "out",
            formats=("json",),
            category_fixture=fixture,
        )
        (outcome,) = run_pipeline(config)
        assert outcome.result.document_category == "legal"

    def test_output_json_round_trips(self, tmp_path):
        path = minimal_input(tmp_path)
        config = PipelineConfig(inputs=(path,), output_dir=tmp_path / "out", formats=("json",))
        (outcome,) = run_pipeline(config)
        text = (tmp_path / "out" / "doc.json").read_text(encoding="utf-8")
        assert document_from_json(text) == outcome.result


class TestExportFailureIsolation:
    def test_export_error_marks_document_failed(self, tmp_path, monkeypatch):
        path = minimal_input(tmp_path)

        def explode(*args, **kwargs):
            raise OSError("disk full")

        monkeypatch.setattr("docweave.pipeline.write_atomic", explode)
        config = PipelineConfig(inputs=(path,), output_dir=tmp_path / "out", formats=("json",))
        (outcome,) = run_pipeline(config)
        assert outcome.failed
        assert "export failed" in outcome.error


class TestAtomicWrites:
    def test_write_atomic_leaves_no_temp(self, tmp_path):
        target = tmp_path / "file.txt"
        write_atomic(target, "hello")
        assert target.read_text(encoding="utf-8") == "hello"
        assert list(tmp_path.iterdir()) == [target]

    def test_interrupted_write_leaves_no_final_file(self, tmp_path, monkeypatch):
        import os as os_mod

        def explode(src, dst):
            raise OSError("disk full")

        monkeypatch.setattr("docweave.pipeline.os.replace", explode)
        with pytest.raises(OSError):
            write_atomic(tmp_path / "file.txt", "hello")
        assert list(tmp_path.iterdir()) == []


class TestConfig:
    def test_threshold_validation(self, tmp_path):
        with pytest.raises(ValidationError):
            PipelineConfig(inputs=(), output_dir=tmp_path, layout_threshold=1.5)

    def test_formats_non_empty(self, tmp_path):
        with pytest.raises(ValidationError):
            PipelineConfig(inputs=(), output_dir=tmp_path, formats=())

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            PipelineConfig(inputs=(), output_dir=tmp_path, formats=("pdf",))

    def test_workers_validated(self, tmp_path):
        with pytest.raises(ValidationError):
            PipelineConfig(inputs=(), output_dir=tmp_path, workers=0)

    def test_config_from_mapping_overrides(self, tmp_path):
        config = config_from_mapping(
            {"layout_threshold": 0.5, "workers": 4, "assembly": {"cluster": {"eps": 0.2}}},
            inputs=(tmp_path / "x.json",),
            output_dir=tmp_path,
            workers=2,
        )
        assert config.layout_threshold == 0.5
        assert config.workers == 2  # flag wins
        assert config.assembly.cluster.eps == 0.2

    def test_unknown_config_key_rejected(self, tmp_path):
        with pytest.raises(ValidationError, match="unknown config keys"):
            config_from_mapping({"worker": 2}, inputs=(), output_dir=tmp_path)


class TestCli:
    def test_parse_writes_selected_formats(self, tmp_path):
        path = minimal_input(tmp_path)
        out = tmp_path / "out"
        runner = CliRunner()
        result = runner.invoke(
            main, ["parse", str(path), "-o", str(out), "--formats", "json,markdown"]
        )
        assert result.exit_code == 0, result.output
        assert sorted(p.name for p in out.iterdir()) == ["doc.json", "doc.md"]

    def test_parse_partial_failure_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken", encoding="utf-8")
        good = minimal_input(tmp_path, "good.json")
        result = CliRunner().invoke(
            main, ["parse", str(bad), str(good), "-o", str(tmp_path / "out")]
        )
        assert result.exit_code == 1

    def test_parse_usage_error_exit_code(self, tmp_path):
        result = CliRunner().invoke(main, ["parse"])
        assert result.exit_code == 2

    def test_parse_unknown_format_usage_error(self, tmp_path):
        path = minimal_input(tmp_path)
        result = CliRunner().invoke(main, ["parse", str(path), "--formats", "pdf"])
        assert result.exit_code == 2

    def test_parse_assembly_flags_reach_config(self, tmp_path):
        # fuzzy threshold 90 lets a ratio-95 string relabel (strict >)
        pages = []
        for n in (1, 2):
            label = "page_header" if n == 1 else "text"
            text = "a" * 20 if n == 1 else "a" * 19 + "b"
            pages.append(
                {
                    "page_number": n,
                    "element_detections": [
                        {"id": f"h{n}", "label": label, "confidence": 0.9,
                         "bbox": [0, 10, 100, 40], "text": text},
                        {"id": f"b{n}", "label": "text", "confidence": 0.9,
                         "bbox": [0, 200, 100, 260], "text": f"body {n} text"},
                    ],
                    "layout_detections": [],
                }
            )
        path = minimal_input(tmp_path, "flags.json", pages=pages)
        out = tmp_path / "out"
        result = CliRunner().invoke(
            main,
            ["parse", str(path), "-o", str(out), "--formats", "json", "--fuzzy-threshold", "90"],
        )
        assert result.exit_code == 0, result.output
        doc = document_from_json((out / "flags.json").read_text(encoding="utf-8"))
        assert doc.pages[1].elements["h2"].type.value == "page_header"

    def test_parse_skip_headers_footers_flag(self, tmp_path):
        pages = [
            {
                "page_number": 1,
                "element_detections": [
                    {"id": "h", "label": "page_header", "confidence": 0.9,
                     "bbox": [0, 10, 100, 40], "text": "Head text"},
                    {"id": "b", "label": "text", "confidence": 0.9,
                     "bbox": [0, 200, 100, 260], "text": "Body text"},
                ],
                "layout_detections": [],
            }
        ]
        path = minimal_input(tmp_path, "skip.json", pages=pages)
        out = tmp_path / "out"
        result = CliRunner().invoke(
            main,
            ["parse", str(path), "-o", str(out), "--formats", "markdown", "--skip-headers-footers"],
        )
        assert result.exit_code == 0, result.output
        md = (out / "skip.md").read_text(encoding="utf-8")
        assert "Head text" not in md and "Body text" in md

    def test_parse_malformed_fixture_is_usage_error(self, tmp_path):
        path = minimal_input(tmp_path)
        bad_fixture = tmp_path / "gate.json"
        bad_fixture.write_text("{oops", encoding="utf-8")
        result = CliRunner().invoke(
            main,
            ["parse", str(path), "-o", str(tmp_path / "out"),
             "--usefulness-fixture", str(bad_fixture)],
        )
        assert result.exit_code == 2
        assert "invalid fixture JSON" in result.output

    def test_parse_with_config_file(self, tmp_path):
        path = minimal_input(tmp_path)
        config_file = tmp_path / "config.json"
        config_file.write_text(json.dumps({"formats": ["json"], "workers": 2}), encoding="utf-8")
        out = tmp_path / "out"
        result = CliRunner().invoke(
            main, ["parse", str(path), "-o", str(out), "--config", str(config_file)]
        )
        assert result.exit_code == 0, result.output
        assert [p.name for p in out.iterdir()] == ["doc.json"]

    def test_export_command(self, tmp_path):
        golden = FIXTURE_DIR / "golden" / "report.json"
        out = tmp_path / "exported"
        result = CliRunner().invoke(
            main, ["export", str(golden), "-o", str(out), "--formats", "markdown,dpbench"]
        )
        assert result.exit_code == 0, result.output
        produced = (out / "report.md").read_bytes()
        assert produced == (FIXTURE_DIR / "golden" / "report.md").read_bytes()

    def test_export_skipped_images_absent(self, tmp_path):
        golden = FIXTURE_DIR / "golden" / "report.json"
        out = tmp_path / "exported"
        CliRunner().invoke(main, ["export", str(golden), "-o", str(out)])
        for path in out.iterdir():
            assert "p2-decor" not in path.read_text(encoding="utf-8")

    def test_export_malformed_json_fails(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"filename": "x"}', encoding="utf-8")
        result = CliRunner().invoke(main, ["export", str(bad), "-o", str(tmp_path / "out")])
        assert result.exit_code == 1
        assert "schema error" in result.output

    def test_eval_self_consistency(self, tmp_path):
        golden = FIXTURE_DIR / "golden" / "report.dpbench.json"
        result = CliRunner().invoke(main, ["eval", str(golden), str(golden), "--mode", "layout"])
        assert result.exit_code == 0, result.output
        assert "NID    1.00" in result.output

    def test_eval_table_mode_self(self, tmp_path):
        golden = FIXTURE_DIR / "golden" / "report.dpbench.json"
        report_path = tmp_path / "report.eval.json"
        result = CliRunner().invoke(
            main,
            ["eval", str(golden), str(golden), "--mode", "table", "--report", str(report_path)],
        )
        assert result.exit_code == 0, result.output
        assert "TEDS   1.00" in result.output
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert report["aggregates"]["mean_teds"] == 1.0
        summary = report_path.with_suffix(".txt").read_text(encoding="utf-8")
        assert "TEDS   1.00" in summary

    def test_eval_missing_file(self, tmp_path):
        golden = FIXTURE_DIR / "golden" / "report.dpbench.json"
        result = CliRunner().invoke(
            main, ["eval", str(golden), str(tmp_path / "nope.json"), "--mode", "layout"]
        )
        assert result.exit_code == 1

    def test_eval_table_mode_on_layout_only_reports_skip(self, tmp_path):
        doc = tmp_path / "layout_only.json"
        doc.write_text(
            json.dumps(
                {
                    "elements": [
                        {
                            "category": "Paragraph",
                            "coordinates": [[0, 0], [1, 0], [1, 1], [0, 1]],
                            "id": 0,
                            "page": 1,
                            "content": {"text": "abc"},
                        }
                    ]
                }
            ),
            encoding="utf-8",
        )
        result = CliRunner().invoke(main, ["eval", str(doc), str(doc), "--mode", "table"])
        assert result.exit_code == 0
        assert "TEDS   n/a" in result.output
        assert "skipped: 1" in result.output
