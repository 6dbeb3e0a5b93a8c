"""The code navigator: masking, definition spans, documentation, and the
three code functions.

For Python sources the spans are cross-checked against the stdlib `ast`
module, an oracle the scanner itself never uses.
"""

from __future__ import annotations

import ast

import pytest

from linkhound.codenav import (
    CodeTools,
    DefinitionMatch,
    ParseFailure,
    extract_documentation,
    load_profiles,
    mask_source,
    scan_definitions,
)
from linkhound.domain import ToolError
from linkhound.fixtures import _CALC_PY_V1, _SHAPES_RS, _UTIL_GO

PROFILES = load_profiles()
PY = PROFILES[".py"]
GO = PROFILES[".go"]
RS = PROFILES[".rs"]


# ---------------------------------------------------------------------------
# Masking.


def test_python_masking_blanks_strings_and_comments():
    source = 'x = "def fake(): pass"  # def comment():\ndef real():\n    pass\n'
    masked = mask_source(source, PY)
    assert "fake" not in masked
    assert "comment" not in masked
    assert "def real():" in masked
    assert len(masked) == len(source)
    assert masked.count("\n") == source.count("\n")


def test_clike_masking_handles_nested_and_line_comments():
    source = "// fn a() {}\n/* fn b() { /* nested */ } */\nfn real() {}\n"
    masked = mask_source(source, RS)
    assert "fn a" not in masked
    assert "fn b" not in masked
    assert "nested" not in masked
    assert "fn real() {}" in masked


def test_rust_masking_separates_lifetimes_from_char_literals():
    source = "fn f<'a>(x: &'a str) -> char {\n    let c = '}';\n    c\n}\n"
    masked = mask_source(source, RS)
    assert "'}'" not in masked  # the char literal is blanked
    assert "<'a>" in masked  # the lifetime is not
    matches = scan_definitions(source, RS, "f")
    assert matches[0].end_line == 4  # the brace inside the literal does not close the block


def test_go_masking_blanks_raw_strings():
    source = 'package p\n\nvar x = `func fake() {`\n\nfunc real() {}\n'
    masked = mask_source(source, GO)
    assert "fake" not in masked
    assert "func real" in masked


# ---------------------------------------------------------------------------
# Python spans, checked against the ast oracle.


def _ast_spans(source: str) -> dict[tuple[str, int], tuple[int, int]]:
    """(name, depth-ish key) -> (start, end) from the stdlib parser."""
    spans = {}

    class V(ast.NodeVisitor):
        def _record(self, node):
            # node.lineno is the def/class line itself; decorators live on
            # their own lines above and are not part of the reported span
            spans[(node.name, node.lineno)] = (node.lineno, node.end_lineno)
            self.generic_visit(node)

        visit_FunctionDef = _record
        visit_AsyncFunctionDef = _record
        visit_ClassDef = _record

    V().visit(ast.parse(source))
    return spans


@pytest.mark.parametrize(
    "source",
    [
        _CALC_PY_V1,
        "def one():\n    return 1\n\n\nasync def two():\n    await one()\n",
        "@dec\n@dec2(arg)\ndef deco():\n    pass\n",
        "class C:\n    def m(self):\n        if x:\n            pass\n\n    def n(self):\n        pass\n",
        "def long_sig(\n    a,\n    b,\n):\n    return a + b\n",
    ],
)
def test_python_spans_match_the_ast_oracle(source):
    oracle = _ast_spans(source)
    got = {
        (m.name, m.start_line): (m.start_line, m.end_line)
        for m in scan_definitions(source, PY)
    }
    assert set(got) == set(oracle)
    for key, (start, end) in oracle.items():
        got_start, got_end = got[key]
        assert got_start == start
        # trailing blank lines inside a block are a known divergence from
        # end_lineno; the scanned block may stop at the last code line
        assert got_end <= end
        span_lines = source.split("\n")[got_start - 1 : got_end]
        assert any(line.strip() for line in span_lines)


def test_python_definition_text_is_verbatim():
    for m in scan_definitions(_CALC_PY_V1, PY):
        assert m.text in _CALC_PY_V1
        lines = _CALC_PY_V1.split("\n")[m.start_line - 1 : m.end_line]
        assert m.text == "\n".join(lines)


def test_python_nested_methods_carry_depth():
    matches = {m.name: m for m in scan_definitions(_CALC_PY_V1, PY)}
    assert matches["Accumulator"].depth == 0
    assert matches["push"].depth == 1
    assert matches["Accumulator"].kind == "structure"
    assert matches["push"].kind == "function"


def test_python_unterminated_block_is_a_parse_failure():
    with pytest.raises(ParseFailure):
        scan_definitions("def broken(:\n    pass\n", PY, "broken")


# ---------------------------------------------------------------------------
# Go and Rust spans.


def test_go_definitions_and_methods():
    matches = {m.name: m for m in scan_definitions(_UTIL_GO, GO)}
    assert set(matches) == {"Greeting", "internalHelper", "Counter", "Add"}
    greeting = matches["Greeting"]
    assert _UTIL_GO.split("\n")[greeting.start_line - 1].startswith("func Greeting")
    assert _UTIL_GO.split("\n")[greeting.end_line - 1] == "}"
    assert matches["Counter"].kind == "structure"


def test_go_bodyless_declaration_ends_at_its_own_line():
    # assembly-backed declarations have a signature but no brace block
    source = "package p\n\nfunc hypot(p, q float64) float64\n\nfunc f() {}\n"
    matches = {m.name: m for m in scan_definitions(source, GO)}
    assert matches["hypot"].start_line == matches["hypot"].end_line == 3
    assert matches["f"].start_line == 5


def test_rust_definitions_structures_and_functions():
    matches = {m.name: m for m in scan_definitions(_SHAPES_RS, RS)}
    assert {"Rect", "area", "perimeter", "Shape"} <= set(matches)
    rect = matches["Rect"]
    lines = _SHAPES_RS.split("\n")
    assert lines[rect.start_line - 1] == "pub struct Rect {"
    assert lines[rect.end_line - 1] == "}"
    assert matches["area"].depth == 1


def test_rust_semicolon_declaration():
    source = "struct Unit;\n\nfn f() {}\n"
    matches = {m.name: m for m in scan_definitions(source, RS)}
    assert matches["Unit"].start_line == matches["Unit"].end_line == 1


# ---------------------------------------------------------------------------
# Documentation.


def test_python_docstring_extraction():
    matches = {m.name: m for m in scan_definitions(_CALC_PY_V1, PY)}
    assert extract_documentation(_CALC_PY_V1, PY, matches["add"]) == "Return the sum of a and b."
    assert extract_documentation(_CALC_PY_V1, PY, matches["scale"]) == ""
    assert extract_documentation(_CALC_PY_V1, PY, matches["Accumulator"]) == "Keeps a running total."


def test_go_preceding_comment_extraction():
    matches = {m.name: m for m in scan_definitions(_UTIL_GO, GO)}
    assert (
        extract_documentation(_UTIL_GO, GO, matches["Greeting"])
        == "Greeting returns a friendly line for name."
    )
    assert extract_documentation(_UTIL_GO, GO, matches["internalHelper"]) == ""


def test_rust_doc_comments_skip_attributes():
    matches = {m.name: m for m in scan_definitions(_SHAPES_RS, RS)}
    assert (
        extract_documentation(_SHAPES_RS, RS, matches["Rect"])
        == "A rectangle on the integer grid."
    )
    assert extract_documentation(_SHAPES_RS, RS, matches["perimeter"]) == ""


# ---------------------------------------------------------------------------
# The three functions over real history.


@pytest.fixture()
def code_tools(lang_history) -> CodeTools:
    return CodeTools(lang_history)


def test_fetch_definition_is_verbatim_and_located(tree, code_tools, lang_history):
    l1 = tree.lang.hash("L1")
    payload = code_tools.fetch_definition({"commit_hash": l1, "path": "calc.py", "name": "add"})
    header, _, body = payload.partition("\n")
    assert header == f"definition name=add kind=function path=calc.py commit={l1} lines=4-6"
    blob = lang_history.read_blob(l1, "calc.py")
    assert body in blob


def test_fetch_definition_historical_absence(tree, code_tools):
    """fresh_feature exists at L2 but not at L1."""
    l1, l2 = tree.lang.hash("L1"), tree.lang.hash("L2")
    ok = code_tools.fetch_definition(
        {"commit_hash": l2, "path": "calc.py", "name": "fresh_feature"}
    )
    assert "fresh_feature" in ok
    with pytest.raises(ToolError) as err:
        code_tools.fetch_definition({"commit_hash": l1, "path": "calc.py", "name": "fresh_feature"})
    assert "not found in calc.py" in str(err.value)
    assert "top-level names:" in str(err.value)
    assert "add" in str(err.value)


def test_fetch_definition_case_insensitive_fallback_is_noted(tree, code_tools):
    payload = code_tools.fetch_definition(
        {"commit_hash": tree.lang.hash("L1"), "path": "calc.py", "name": "ADD"}
    )
    assert payload.startswith("note: no exact match for 'ADD'")
    assert "def add(a, b):" in payload


def test_fetch_definition_unsupported_language(tree, code_tools):
    with pytest.raises(ToolError, match="unsupported language"):
        code_tools.fetch_definition(
            {"commit_hash": tree.lang.hash("L1"), "path": "notes.txt", "name": "x"}
        )


def test_fetch_definition_missing_file_at_commit(tree, code_tools):
    """extra/helpers.py only exists from L2 onward."""
    with pytest.raises(ToolError, match="not found at commit"):
        code_tools.fetch_definition(
            {"commit_hash": tree.lang.hash("L1"), "path": "extra/helpers.py", "name": "tiny"}
        )


def test_fetch_document_blocks(tree, code_tools):
    l1 = tree.lang.hash("L1")
    doc = code_tools.fetch_document({"commit_hash": l1, "path": "util.go", "name": "Greeting"})
    assert doc.splitlines()[0].startswith("documentation name=Greeting kind=function")
    assert "friendly line" in doc
    none = code_tools.fetch_document(
        {"commit_hash": l1, "path": "calc.py", "name": "scale"}
    )
    assert none == "(no documentation)"


def test_fetch_lines_numbering_and_bounds(tree, code_tools):
    l1 = tree.lang.hash("L1")
    payload = code_tools.fetch_lines_in_file(
        {"commit_hash": l1, "path": "calc.py", "start_line": 4, "end_line": 6}
    )
    assert payload.splitlines() == [
        "4: def add(a, b):",
        '5:     """Return the sum of a and b."""',
        "6:     return a + b",
    ]
    clamped = code_tools.fetch_lines_in_file(
        {"commit_hash": l1, "path": "notes.txt", "start_line": 1, "end_line": 99}
    )
    assert clamped.splitlines() == [
        "1: plain text, no supported language",
        "(end of file)",
    ]
    with pytest.raises(ToolError, match="past the end"):
        code_tools.fetch_lines_in_file(
            {"commit_hash": l1, "path": "notes.txt", "start_line": 50, "end_line": 60}
        )
    with pytest.raises(ToolError, match="before start_line"):
        code_tools.fetch_lines_in_file(
            {"commit_hash": l1, "path": "notes.txt", "start_line": 2, "end_line": 1}
        )


def test_fetch_lines_works_on_any_text_file(tree, code_tools):
    """Line reads need no language profile."""
    payload = code_tools.fetch_lines_in_file(
        {
            "commit_hash": tree.lang.hash("L1"),
            "path": "bulk.txt",
            "start_line": 1,
            "end_line": 2,
        }
    )
    assert payload.startswith("1: record 00000")


def test_profiles_cover_the_three_shipped_languages():
    assert {".py", ".go", ".rs"} <= set(PROFILES)
    assert all(p.definition_query or p.structure_query for p in PROFILES.values())
