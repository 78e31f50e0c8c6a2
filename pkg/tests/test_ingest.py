import json

import pytest
from hypothesis import given, strategies as st

from conftest import build_entity, write_detection_file
from docweave.clients import (
    EnrichmentResult,
    FixtureCategoryClassifier,
    FixtureEnrichmentClient,
    FixtureUsefulnessClassifier,
    StubCategoryClassifier,
    StubEnrichmentClient,
    StubUsefulnessClassifier,
    UsefulnessVerdict,
    text_digest,
)
from docweave.errors import DetectionInputError, ValidationError
from docweave.geometry import BBox
from docweave.ingest import (
    build_entities,
    classify_document,
    enrich_entities,
    filter_small_text,
    gate_images,
    load_detections,
    normalize_body,
    normalize_title,
    RawDetection,
)


def detection(label, confidence, bbox=(0, 0, 10, 10), text="some text", **kwargs):
    return {"label": label, "confidence": confidence, "bbox": list(bbox), "text": text, **kwargs}


def input_payload(element_detections=(), layout_detections=(), page_number=1, **extra):
    return {
        "filename": "doc.pdf",
        "metadata": {},
        "pages": [
            {
                "page_number": page_number,
                "element_detections": list(element_detections),
                "layout_detections": list(layout_detections),
            }
        ],
        **extra,
    }


class TestLoadDetections:
    def test_layout_below_threshold_dropped(self, tmp_path):
        path = write_detection_file(
            tmp_path / "in.json",
            input_payload(layout_detections=[detection("multi_column", 0.19)]),
        )
        result = load_detections(path)
        assert result.pages[0].layout_detections == ()

    def test_element_threshold_inclusive(self, tmp_path):
        path = write_detection_file(
            tmp_path / "in.json",
            input_payload(element_detections=[detection("text", 0.30)]),
        )
        result = load_detections(path)
        assert len(result.pages[0].element_detections) == 1

    def test_element_below_threshold_dropped(self, tmp_path):
        path = write_detection_file(
            tmp_path / "in.json",
            input_payload(element_detections=[detection("text", 0.29)]),
        )
        assert load_detections(path).pages[0].element_detections == ()

    def test_empty_pages_valid(self, tmp_path):
        payload = {"filename": "doc.pdf", "metadata": {}, "pages": []}
        path = write_detection_file(tmp_path / "in.json", payload)
        assert load_detections(path).pages == ()

    def test_unknown_label_rejected(self, tmp_path):
        path = write_detection_file(
            tmp_path / "in.json",
            input_payload(element_detections=[detection("paragraph", 0.9)]),
        )
        with pytest.raises(DetectionInputError, match="unknown element label 'paragraph'"):
            load_detections(path)

    def test_unknown_layout_label_rejected_even_below_threshold(self, tmp_path):
        path = write_detection_file(
            tmp_path / "in.json",
            input_payload(layout_detections=[detection("columns", 0.01)]),
        )
        with pytest.raises(DetectionInputError, match="unknown layout label 'columns'"):
            load_detections(path)

    def test_malformed_json_reports_position(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"filename": "x",\n  "pages": [}', encoding="utf-8")
        with pytest.raises(DetectionInputError, match="line 2"):
            load_detections(path)

    def test_field_context_in_errors(self, tmp_path):
        path = write_detection_file(
            tmp_path / "in.json",
            input_payload(element_detections=[detection("text", 1.4)]),
        )
        with pytest.raises(DetectionInputError, match=r"element_detections\[0\].confidence"):
            load_detections(path)

    def test_duplicate_page_numbers_rejected(self, tmp_path):
        payload = input_payload()
        payload["pages"].append(dict(payload["pages"][0]))
        path = write_detection_file(tmp_path / "in.json", payload)
        with pytest.raises(DetectionInputError, match="duplicate page number"):
            load_detections(path)

    def test_duplicate_entity_ids_rejected(self, tmp_path):
        path = write_detection_file(
            tmp_path / "in.json",
            input_payload(
                element_detections=[
                    detection("text", 0.9, id="same"),
                    detection("title", 0.9, id="same"),
                ]
            ),
        )
        with pytest.raises(DetectionInputError, match="duplicate entity id 'same'"):
            load_detections(path)

    def test_threshold_monotone(self, tmp_path):
        confidences = [0.21, 0.35, 0.6, 0.95]
        path = write_detection_file(
            tmp_path / "in.json",
            input_payload(
                element_detections=[detection("text", c) for c in confidences]
            ),
        )
        kept = [
            len(load_detections(path, element_threshold=t).pages[0].element_detections)
            for t in (0.1, 0.3, 0.5, 0.9, 1.0)
        ]
        assert kept == sorted(kept, reverse=True)


class TestNormalizeTitle:
    def test_punctuation_run_collapsed(self):
        assert normalize_title("Results!!!") == "Results!"

    def test_identity_on_clean_input(self):
        assert normalize_title("Title") == "Title"

    def test_control_chars_stripped_and_trimmed(self):
        assert normalize_title("  A\u0007B  ") == "AB"

    def test_two_marks_kept(self):
        assert normalize_title("Intro\u0000duction!!") == "Introduction!!"

    def test_letter_runs_untouched(self):
        assert normalize_title("Balloon") == "Balloon"

    @given(st.text(max_size=40))
    def test_idempotent(self, s):
        once = normalize_title(s)
        assert normalize_title(once) == once


class TestNormalizeBody:
    def test_nfkc_ligature(self):
        assert normalize_body("ﬁle") == "file"

    def test_bullet_standardized(self):
        assert normalize_body("• item") == "- item"

    def test_whitespace_collapsed(self):
        assert normalize_body("a   b") == "a b"

    def test_line_structure_preserved(self):
        assert normalize_body("• one\n● two") == "- one\n- two"

    @given(st.text(max_size=60))
    def test_idempotent(self, s):
        once = normalize_body(s)
        assert normalize_body(once) == once


class TestBuildEntities:
    def test_geometry_and_weight(self, schema):
        det = RawDetection("text", 0.9, BBox(0, 0, 10, 10), text="hello")
        (entity,) = build_entities([det], schema)
        assert entity.mid_point.x == 5 and entity.mid_point.y == 5
        assert entity.weight == 6

    def test_title_normalized(self, schema):
        det = RawDetection("title", 0.9, BBox(0, 0, 10, 10), text="Intro\u0000duction!!")
        (entity,) = build_entities([det], schema)
        assert entity.value.text == "Introduction!!"

    def test_table_with_empty_text_retained(self, schema):
        det = RawDetection("table", 0.9, BBox(0, 0, 10, 10), text="")
        entities = filter_small_text(build_entities([det], schema))
        assert len(entities) == 1

    def test_supplied_id_preserved(self, schema):
        det = RawDetection("text", 0.9, BBox(0, 0, 10, 10), text="hello", id="keep-me")
        (entity,) = build_entities([det], schema)
        assert entity.id == "keep-me"


class TestFilterSmallText:
    def test_two_chars_removed(self, schema):
        entity = build_entity("e", "text", (0, 0, 5, 5), text="ab", schema=schema)
        assert filter_small_text([entity]) == []

    def test_empty_image_kept(self, schema):
        entity = build_entity("e", "image", (0, 0, 5, 5), text="", schema=schema)
        assert filter_small_text([entity]) == [entity]

    def test_three_chars_kept(self, schema):
        entity = build_entity("e", "text", (0, 0, 5, 5), text="abc", schema=schema)
        assert filter_small_text([entity]) == [entity]

    def test_empty_caption_removed(self, schema):
        entity = build_entity("e", "image_caption", (0, 0, 5, 5), text="", schema=schema)
        assert filter_small_text([entity]) == []


class _FailingClassifier:
    def classify(self, entity):
        raise RuntimeError("boom")


class _FailingEnricher:
    def enrich(self, entity):
        raise RuntimeError("boom")


class TestGateImages:
    def test_useless_image_skipped(self, schema):
        image = build_entity("img", "image", (0, 0, 10, 10), schema=schema)
        classifier = StubUsefulnessClassifier(overrides={"img": UsefulnessVerdict.USELESS})
        kept, skipped = gate_images([image], classifier)
        assert kept == [] and skipped == ["img"]

    def test_table_never_classified(self, schema):
        calls = []

        class Recorder:
            def classify(self, entity):
                calls.append(entity.id)
                return UsefulnessVerdict.USEFUL

        table = build_entity("tbl", "table", (0, 0, 10, 10), text="data", schema=schema)
        kept, skipped = gate_images([table], Recorder())
        assert kept == [table] and skipped == [] and calls == []

    def test_no_images_vacuous(self, schema):
        text = build_entity("t", "text", (0, 0, 10, 10), text="abc", schema=schema)
        kept, skipped = gate_images([text], StubUsefulnessClassifier())
        assert kept == [text] and skipped == []

    def test_fail_open(self, schema):
        image = build_entity("img", "image", (0, 0, 10, 10), schema=schema)
        kept, skipped = gate_images([image], _FailingClassifier())
        assert kept == [image] and skipped == []

    def test_partition_property(self, schema):
        images = [
            build_entity(f"img{i}", "image", (i, 0, i + 5, 5), schema=schema) for i in range(6)
        ]
        overrides = {"img1": UsefulnessVerdict.USELESS, "img4": UsefulnessVerdict.USELESS}
        kept, skipped = gate_images(images, StubUsefulnessClassifier(overrides=overrides))
        kept_ids = {e.id for e in kept}
        assert kept_ids | set(skipped) == {e.id for e in images}
        assert kept_ids & set(skipped) == set()

    def test_parallel_matches_serial(self, schema):
        images = [
            build_entity(f"img{i}", "image", (i, 0, i + 5, 5), schema=schema) for i in range(8)
        ]
        classifier = StubUsefulnessClassifier(
            overrides={"img2": UsefulnessVerdict.USELESS, "img7": UsefulnessVerdict.USELESS}
        )
        serial = gate_images(images, classifier, max_workers=1)
        parallel = gate_images(images, classifier, max_workers=8)
        assert serial == parallel


class TestEnrichEntities:
    def test_table_enriched_from_fixture(self, schema, tmp_path):
        fixture = tmp_path / "enrich.json"
        fixture.write_text(
            json.dumps(
                {
                    "responses": {
                        "tbl": {
                            "title": "T",
                            "data": [{"a": "1", "b": "2"}],
                        }
                    }
                }
            ),
            encoding="utf-8",
        )
        table = build_entity("tbl", "table", (0, 0, 10, 10), text="raw", schema=schema)
        enriched, calls = enrich_entities([table], FixtureEnrichmentClient(fixture))
        assert calls == 1
        assert enriched[0].value.title == "T"
        assert enriched[0].value.data == ({"a": "1", "b": "2"},)
        assert enriched[0].value.text == "raw"

    def test_failure_keeps_ocr_value_but_counts(self, schema):
        table = build_entity("tbl", "table", (0, 0, 10, 10), text="raw", schema=schema)
        enriched, calls = enrich_entities([table], _FailingEnricher())
        assert calls == 1
        assert enriched[0].value.text == "raw"

    def test_geometry_never_mutated(self, schema):
        table = build_entity("tbl", "table", (0, 0, 10, 10), text="raw", schema=schema)
        enriched, _ = enrich_entities([table], StubEnrichmentClient())
        assert enriched[0].pixel_coordinates == table.pixel_coordinates
        assert enriched[0].weight == table.weight
        assert enriched[0].mid_point == table.mid_point

    def test_text_entities_not_called(self, schema):
        text = build_entity("t", "text", (0, 0, 10, 10), text="abc", schema=schema)
        enriched, calls = enrich_entities([text], _FailingEnricher())
        assert calls == 0 and enriched == [text]

    def test_image_text_replaced(self, schema, tmp_path):
        fixture = tmp_path / "enrich.json"
        fixture.write_text(
            json.dumps({"responses": {"img": {"summary": "a chart", "text": "values rise"}}}),
            encoding="utf-8",
        )
        image = build_entity("img", "image", (0, 0, 10, 10), text="", schema=schema)
        enriched, calls = enrich_entities([image], FixtureEnrichmentClient(fixture))
        assert enriched[0].value.text == "values rise"
        assert enriched[0].value.summary == "a chart"

    def test_enrichment_result_requires_a_field(self):
        with pytest.raises(ValidationError):
            EnrichmentResult()

    def test_skipped_image_never_enriched(self, schema):
        calls = []

        class Recorder:
            def enrich(self, entity):
                calls.append(entity.id)
                return EnrichmentResult(text_or_data=entity.value.text or "x")

        useful = build_entity("img-useful", "image", (0, 0, 10, 10), schema=schema)
        useless = build_entity("img-useless", "image", (20, 0, 30, 10), schema=schema)
        classifier = StubUsefulnessClassifier(
            overrides={"img-useless": UsefulnessVerdict.USELESS}
        )
        kept, skipped = gate_images([useful, useless], classifier)
        _, count = enrich_entities(kept, Recorder())
        assert skipped == ["img-useless"]
        assert calls == ["img-useful"]
        assert count == 1

    def test_parallel_matches_serial(self, schema, tmp_path):
        fixture = tmp_path / "enrich.json"
        fixture.write_text(
            json.dumps(
                {
                    "responses": {
                        f"tbl{i}": {"title": f"T{i}", "summary": f"S{i}"} for i in range(6)
                    }
                }
            ),
            encoding="utf-8",
        )
        tables = [
            build_entity(f"tbl{i}", "table", (0, 20 * i, 10, 20 * i + 10), text=f"t{i}", schema=schema)
            for i in range(8)  # tbl6/tbl7 missing from the fixture: fail-open path
        ]
        client = FixtureEnrichmentClient(fixture)
        serial = enrich_entities(tables, client, max_workers=1)
        parallel = enrich_entities(tables, client, max_workers=8)
        assert serial == parallel
        assert serial[1] == 8


class TestClassifyDocument:
    def test_stub_returns_uncategorized(self):
        assert classify_document("anything", StubCategoryClassifier()) == "uncategorized"

    def test_fixture_lookup(self, tmp_path):
        fixture = tmp_path / "cat.json"
        fixture.write_text(
            json.dumps({"categories": {text_digest("quarterly revenue"): "financial"}}),
            encoding="utf-8",
        )
        classifier = FixtureCategoryClassifier(fixture)
        assert classify_document("quarterly revenue", classifier) == "financial"
        assert classify_document("unknown text", classifier) == "uncategorized"

    def test_empty_text(self):
        assert classify_document("", StubCategoryClassifier()) == "uncategorized"

    def test_failure_maps_to_default(self):
        class Exploder:
            def classify(self, text):
                raise RuntimeError("no model")

        assert classify_document("abc", Exploder()) == "uncategorized"


class TestEnrichmentClientResolution:
    def test_env_var_selects_http_client(self, monkeypatch):
        from docweave.clients import (
            ENRICHMENT_URL_ENV,
            HttpEnrichmentClient,
            StubEnrichmentClient,
            resolve_enrichment_client,
        )

        monkeypatch.delenv(ENRICHMENT_URL_ENV, raising=False)
        assert isinstance(resolve_enrichment_client(), StubEnrichmentClient)
        monkeypatch.setenv(ENRICHMENT_URL_ENV, "http://localhost:9/enrich")
        client = resolve_enrichment_client()
        assert isinstance(client, HttpEnrichmentClient)
        assert client.url == "http://localhost:9/enrich"

    def test_fixture_beats_env(self, monkeypatch, tmp_path):
        from docweave.clients import (
            ENRICHMENT_URL_ENV,
            FixtureEnrichmentClient,
            resolve_enrichment_client,
        )

        fixture = tmp_path / "enrich.json"
        fixture.write_text('{"responses": {}}', encoding="utf-8")
        monkeypatch.setenv(ENRICHMENT_URL_ENV, "http://localhost:9/enrich")
        assert isinstance(resolve_enrichment_client(fixture), FixtureEnrichmentClient)


class TestFixtureUsefulness:
    def test_fixture_verdicts(self, schema, tmp_path):
        fixture = tmp_path / "gate.json"
        fixture.write_text(
            json.dumps({"verdicts": {"img": "useless"}, "default": "useful"}),
            encoding="utf-8",
        )
        classifier = FixtureUsefulnessClassifier(fixture)
        image = build_entity("img", "image", (0, 0, 10, 10), schema=schema)
        other = build_entity("img2", "image", (0, 0, 10, 10), schema=schema)
        assert classifier.classify(image) is UsefulnessVerdict.USELESS
        assert classifier.classify(other) is UsefulnessVerdict.USEFUL
