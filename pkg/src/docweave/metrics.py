"""Reading-order and table-structure metrics plus the evaluation harness.

NID scores serialized reading order with a character-level insert/delete
distance. TEDS and TEDS-S score tables as ordered labeled trees under a tree
edit distance computed with the Zhang-Shasha keyroot decomposition; the cost
model charges 1 for insert/delete, 1 for tag or span mismatches, and a
normalized character edit distance between cell texts for matching ``td``
nodes. TEDS-S runs the same comparison with cell texts blanked.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from html.parser import HTMLParser
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

from .errors import EvaluationError, TableParseError

logger = logging.getLogger(__name__)

#: Categories excluded from reading-order serialization.
NID_EXCLUDED_CATEGORIES = frozenset({"Table", "Figure", "Chart"})


# ---------------------------------------------------------------------------
# String distances
# ---------------------------------------------------------------------------


def indel_distance(a: str, b: str) -> int:
    """Minimum number of character insertions+deletions turning ``a`` into ``b``."""
    # Shared prefix/suffix contributes nothing; strip it before the DP.
    p = 0
    while p < len(a) and p < len(b) and a[p] == b[p]:
        p += 1
    s = 0
    while s < len(a) - p and s < len(b) - p and a[len(a) - 1 - s] == b[len(b) - 1 - s]:
        s += 1
    a = a[p : len(a) - s]
    b = b[p : len(b) - s]
    if not a:
        return len(b)
    if not b:
        return len(a)

    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            if ca == cb:
                current.append(previous[j - 1])
            else:
                current.append(1 + min(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def nid(reference: str, prediction: str) -> float:
    """Normalized indel distance similarity in [0, 1]; two empty strings score 1."""
    total = len(reference) + len(prediction)
    if total == 0:
        return 1.0
    return 1.0 - indel_distance(reference, prediction) / total


def levenshtein(a: str, b: str) -> int:
    """Classic edit distance with substitutions (used by the TEDS cell cost)."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (ca != cb),
                )
            )
        previous = current
    return previous[-1]


def serialize_for_nid(elements: Sequence[Mapping[str, Any]]) -> str:
    """Concatenate the text of non-table/figure/chart elements, newline-joined."""
    parts = []
    for element in elements:
        if element.get("category") in NID_EXCLUDED_CATEGORIES:
            continue
        content = element.get("content") or {}
        parts.append(str(content.get("text") or ""))
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# Table trees
# ---------------------------------------------------------------------------


@dataclass
class TableNode:
    """Node of a rooted, ordered table tree; text is non-empty only on cells."""

    tag: str
    text: str = ""
    colspan: int = 1
    rowspan: int = 1
    children: list["TableNode"] = field(default_factory=list)

    def size(self) -> int:
        return 1 + sum(child.size() for child in self.children)

    def blanked(self) -> "TableNode":
        """Copy with all cell texts removed (spans retained) for TEDS-S."""
        return TableNode(
            tag=self.tag,
            text="",
            colspan=self.colspan,
            rowspan=self.rowspan,
            children=[child.blanked() for child in self.children],
        )


_SECTION_TAGS = {"thead", "tbody", "tfoot"}
_CELL_TAGS = {"td", "th"}


def _parse_span(attrs: dict[str, Optional[str]], name: str) -> int:
    raw = attrs.get(name)
    if raw is None:
        return 1
    try:
        value = int(str(raw).strip())
    except ValueError:
        logger.warning("unparseable %s=%r, defaulting to 1", name, raw)
        return 1
    if value < 1:
        logger.warning("non-positive %s=%r, defaulting to 1", name, raw)
        return 1
    return value


class _TableHtmlParser(HTMLParser):
    """Builds a TableNode tree from the first <table> element.

    Only table/thead/tbody/tfoot/tr/td(th) become nodes; other markup inside
    cells contributes text only. Unclosed rows and cells are repaired by
    closing them at the next structural boundary.
    """

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root: Optional[TableNode] = None
        self.section: Optional[TableNode] = None
        self.row: Optional[TableNode] = None
        self.cell: Optional[TableNode] = None
        self.cell_parts: list[str] = []
        self.done = False

    def _close_cell(self):
        if self.cell is not None:
            self.cell.text = " ".join("".join(self.cell_parts).split())
            self.cell = None
            self.cell_parts = []

    def _close_row(self):
        self._close_cell()
        self.row = None

    def _close_section(self):
        self._close_row()
        self.section = None

    def handle_starttag(self, tag, attrs):
        if self.done:
            return
        if self.root is None:
            if tag == "table":
                self.root = TableNode("table")
            return
        if tag == "table":
            return  # nested tables contribute cell text only
        if tag in _SECTION_TAGS:
            self._close_section()
            self.section = TableNode(tag)
            self.root.children.append(self.section)
        elif tag == "tr":
            self._close_row()
            parent = self.section if self.section is not None else self.root
            self.row = TableNode("tr")
            parent.children.append(self.row)
        elif tag in _CELL_TAGS:
            self._close_cell()
            if self.row is None:
                parent = self.section if self.section is not None else self.root
                self.row = TableNode("tr")
                parent.children.append(self.row)
            attr_map = dict(attrs)
            self.cell = TableNode(
                "td",
                colspan=_parse_span(attr_map, "colspan"),
                rowspan=_parse_span(attr_map, "rowspan"),
            )
            self.row.children.append(self.cell)

    def handle_endtag(self, tag):
        if self.done or self.root is None:
            return
        if tag in _CELL_TAGS:
            self._close_cell()
        elif tag == "tr":
            self._close_row()
        elif tag in _SECTION_TAGS:
            self._close_section()
        elif tag == "table":
            self._close_section()
            self.done = True

    def handle_data(self, data):
        if self.done:
            return
        if self.cell is not None:
            self.cell_parts.append(data)

    def finish(self) -> TableNode:
        self.close()
        if self.root is None:
            raise TableParseError("no table found")
        self._close_section()
        return self.root


def parse_table_html(html: str) -> TableNode:
    """Parse table HTML into a TableNode tree rooted at ``table``."""
    parser = _TableHtmlParser()
    parser.feed(html)
    return parser.finish()


# ---------------------------------------------------------------------------
# Tree edit distance (Zhang-Shasha) and TEDS
# ---------------------------------------------------------------------------


def relabel_cost(a: TableNode, b: TableNode) -> float:
    """TEDS relabel cost: 1 for tag/span mismatch, cell-text distance otherwise."""
    if a.tag != b.tag or a.colspan != b.colspan or a.rowspan != b.rowspan:
        return 1.0
    if a.tag == "td":
        if not a.text and not b.text:
            return 0.0
        return levenshtein(a.text, b.text) / max(len(a.text), len(b.text))
    return 0.0


def _postorder(root: TableNode) -> tuple[list[TableNode], list[int]]:
    """Postorder node list plus, per node, the index of its leftmost leaf."""
    nodes: list[TableNode] = []
    lmds: list[int] = []

    def visit(node: TableNode) -> int:
        first_leaf = None
        for child in node.children:
            child_lmd = visit(child)
            if first_leaf is None:
                first_leaf = child_lmd
        index = len(nodes)
        nodes.append(node)
        lmds.append(first_leaf if first_leaf is not None else index)
        return lmds[index]

    visit(root)
    return nodes, lmds


def _keyroots(lmds: list[int]) -> list[int]:
    # Highest postorder index per distinct leftmost-leaf value.
    latest: dict[int, int] = {}
    for index, lmd in enumerate(lmds):
        latest[lmd] = index
    return sorted(latest.values())


def tree_edit_distance(tree_a: TableNode, tree_b: TableNode) -> float:
    """Ordered tree edit distance under the TEDS cost model."""
    a_nodes, a_lmds = _postorder(tree_a)
    b_nodes, b_lmds = _postorder(tree_b)
    na, nb = len(a_nodes), len(b_nodes)
    treedist = [[0.0] * nb for _ in range(na)]

    def compute(i: int, j: int) -> None:
        # Forest distance over the subtrees rooted at keyroots i and j.
        ioff = a_lmds[i] - 1
        joff = b_lmds[j] - 1
        m = i - a_lmds[i] + 2
        n = j - b_lmds[j] + 2
        fd = [[0.0] * n for _ in range(m)]
        for x in range(1, m):
            fd[x][0] = fd[x - 1][0] + 1.0
        for y in range(1, n):
            fd[0][y] = fd[0][y - 1] + 1.0
        for x in range(1, m):
            for y in range(1, n):
                if a_lmds[i] == a_lmds[x + ioff] and b_lmds[j] == b_lmds[y + joff]:
                    fd[x][y] = min(
                        fd[x - 1][y] + 1.0,
                        fd[x][y - 1] + 1.0,
                        fd[x - 1][y - 1]
                        + relabel_cost(a_nodes[x + ioff], b_nodes[y + joff]),
                    )
                    treedist[x + ioff][y + joff] = fd[x][y]
                else:
                    p = a_lmds[x + ioff] - 1 - ioff
                    q = b_lmds[y + joff] - 1 - joff
                    fd[x][y] = min(
                        fd[x - 1][y] + 1.0,
                        fd[x][y - 1] + 1.0,
                        fd[p][q] + treedist[x + ioff][y + joff],
                    )

    for i in _keyroots(a_lmds):
        for j in _keyroots(b_lmds):
            compute(i, j)
    return treedist[na - 1][nb - 1]


def teds(tree_a: TableNode, tree_b: TableNode) -> float:
    """Tree edit distance similarity in [0, 1]."""
    denominator = max(tree_a.size(), tree_b.size())
    score = 1.0 - tree_edit_distance(tree_a, tree_b) / denominator
    return max(0.0, score)


def teds_s(tree_a: TableNode, tree_b: TableNode) -> float:
    """Structure-only TEDS: cell contents are blanked before comparison."""
    return teds(tree_a.blanked(), tree_b.blanked())


# ---------------------------------------------------------------------------
# Evaluation harness over DP-Bench style files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleScore:
    sample_id: str
    nid: Optional[float] = None
    teds: Optional[float] = None
    teds_s: Optional[float] = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"sample_id": self.sample_id}
        for name in ("nid", "teds", "teds_s"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


@dataclass(frozen=True)
class EvalReport:
    mode: str
    samples: tuple[SampleScore, ...]
    mean_nid: Optional[float]
    mean_teds: Optional[float]
    mean_teds_s: Optional[float]
    evaluated: int
    skipped: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "samples": [s.to_dict() for s in self.samples],
            "aggregates": {
                "mean_nid": self.mean_nid,
                "mean_teds": self.mean_teds,
                "mean_teds_s": self.mean_teds_s,
            },
            "evaluated": self.evaluated,
            "skipped": self.skipped,
        }

    def summary_text(self) -> str:
        def fmt(value: Optional[float]) -> str:
            return "n/a" if value is None else f"{value:.2f}"

        lines = [f"mode: {self.mode}"]
        if self.mode == "layout":
            lines.append(f"NID    {fmt(self.mean_nid)}")
        else:
            lines.append(f"TEDS   {fmt(self.mean_teds)}")
            lines.append(f"TEDS-S {fmt(self.mean_teds_s)}")
        lines.append(f"evaluated: {self.evaluated}  skipped: {self.skipped}")
        return "\n".join(lines)


def _load_dpbench_file(path: Path) -> list[Mapping[str, Any]]:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise EvaluationError(f"{path}: cannot read file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise EvaluationError(
            f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    elements = raw.get("elements") if isinstance(raw, Mapping) else None
    if not isinstance(elements, list):
        raise EvaluationError(f"{path}: expected an object with an 'elements' array")
    return elements


def _collect_documents(
    reference_path: Path, prediction_path: Path
) -> list[tuple[str, list, list]]:
    if reference_path.is_dir() != prediction_path.is_dir():
        raise EvaluationError(
            "reference and prediction must both be files or both be directories"
        )
    if not reference_path.is_dir():
        return [
            (
                reference_path.stem,
                _load_dpbench_file(reference_path),
                _load_dpbench_file(prediction_path),
            )
        ]
    documents = []
    for ref_file in sorted(reference_path.glob("*.json")):
        pred_file = prediction_path / ref_file.name
        if not pred_file.exists():
            raise EvaluationError(f"{pred_file}: missing prediction for {ref_file.name}")
        documents.append(
            (ref_file.stem, _load_dpbench_file(ref_file), _load_dpbench_file(pred_file))
        )
    if not documents:
        raise EvaluationError(f"{reference_path}: no reference documents found")
    return documents


def _element_bbox(element: Mapping[str, Any]) -> Optional[tuple[float, float, float, float]]:
    coords = element.get("coordinates")
    if not isinstance(coords, Sequence) or len(coords) != 4:
        return None
    try:
        left, top = float(coords[0][0]), float(coords[0][1])
        right, bottom = float(coords[2][0]), float(coords[2][1])
    except (TypeError, ValueError, IndexError):
        return None
    return (left, top, right, bottom)


def _bbox_iou(a, b) -> float:
    ileft, itop = max(a[0], b[0]), max(a[1], b[1])
    iright, ibottom = min(a[2], b[2]), min(a[3], b[3])
    if ileft >= iright or itop >= ibottom:
        return 0.0
    inter = (iright - ileft) * (ibottom - itop)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def _table_html(element: Mapping[str, Any]) -> Optional[str]:
    content = element.get("content") or {}
    html = content.get("html")
    return html if isinstance(html, str) and html.strip() else None


def _match_tables(
    ref_tables: list[Mapping[str, Any]], pred_tables: list[Mapping[str, Any]]
) -> list[Optional[int]]:
    """Greedily pair each reference table with the best-IoU prediction on its page."""
    used: set[int] = set()
    matches: list[Optional[int]] = []
    for ref in ref_tables:
        ref_box = _element_bbox(ref)
        best_index, best_iou = None, 0.0
        for index, pred in enumerate(pred_tables):
            if index in used or pred.get("page") != ref.get("page"):
                continue
            pred_box = _element_bbox(pred)
            if ref_box is None or pred_box is None:
                continue
            overlap = _bbox_iou(ref_box, pred_box)
            if overlap > best_iou:
                best_index, best_iou = index, overlap
        if best_index is not None:
            used.add(best_index)
        matches.append(best_index)
    return matches


def _mean(values: list[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


def evaluate(
    reference_path: Union[str, Path],
    prediction_path: Union[str, Path],
    mode: str,
) -> EvalReport:
    """Score prediction files against reference files.

    ``layout`` mode computes one NID per document over the serialized reading
    order. ``table`` mode pairs reference tables with predicted tables by page
    and maximal bbox IoU; an unmatched or unparseable prediction scores 0, and
    a reference table without parseable HTML is skipped. Documents with no
    reference tables count as skipped samples in table mode.
    """
    if mode not in ("layout", "table"):
        raise EvaluationError(f"unknown evaluation mode {mode!r}")
    reference_path = Path(reference_path)
    prediction_path = Path(prediction_path)
    for path in (reference_path, prediction_path):
        if not path.exists():
            raise EvaluationError(f"{path}: file not found")

    documents = _collect_documents(reference_path, prediction_path)
    samples: list[SampleScore] = []
    skipped = 0

    if mode == "layout":
        for name, ref_elements, pred_elements in documents:
            score = nid(serialize_for_nid(ref_elements), serialize_for_nid(pred_elements))
            samples.append(SampleScore(sample_id=name, nid=score))
        return EvalReport(
            mode=mode,
            samples=tuple(samples),
            mean_nid=_mean([s.nid for s in samples]),
            mean_teds=None,
            mean_teds_s=None,
            evaluated=len(samples),
            skipped=0,
        )

    for name, ref_elements, pred_elements in documents:
        ref_tables = [e for e in ref_elements if e.get("category") == "Table"]
        pred_tables = [e for e in pred_elements if e.get("category") == "Table"]
        if not ref_tables:
            skipped += 1
            continue
        matches = _match_tables(ref_tables, pred_tables)
        for position, (ref, match) in enumerate(zip(ref_tables, matches)):
            sample_id = f"{name}#table{ref.get('id', position)}"
            ref_html = _table_html(ref)
            if ref_html is None:
                skipped += 1
                continue
            try:
                ref_tree = parse_table_html(ref_html)
            except TableParseError:
                skipped += 1
                continue
            score_teds, score_teds_s = 0.0, 0.0
            if match is not None:
                pred_html = _table_html(pred_tables[match])
                if pred_html is not None:
                    try:
                        pred_tree = parse_table_html(pred_html)
                    except TableParseError:
                        pred_tree = None
                    if pred_tree is not None:
                        score_teds = teds(ref_tree, pred_tree)
                        score_teds_s = teds_s(ref_tree, pred_tree)
            samples.append(
                SampleScore(sample_id=sample_id, teds=score_teds, teds_s=score_teds_s)
            )

    return EvalReport(
        mode=mode,
        samples=tuple(samples),
        mean_nid=None,
        mean_teds=_mean([s.teds for s in samples]),
        mean_teds_s=_mean([s.teds_s for s in samples]),
        evaluated=len(samples),
        skipped=skipped,
    )
