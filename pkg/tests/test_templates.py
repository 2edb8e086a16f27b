import pytest

from glave.errors import ConfigError
from glave.templates import (
    REQUIRED_FIELDS,
    TEMPLATE_NAMES,
    render_template,
    template_body,
    validate_templates,
)

ALL_BLOCKS = frozenset(
    {"marks", "overview", "both", "detail_only", "diff_only", "hints"}
)


def filler(name):
    return {field: f"<{field}>" for field in REQUIRED_FIELDS[name]}


class TestCatalog:
    def test_every_template_has_a_body(self):
        for name in TEMPLATE_NAMES:
            assert template_body(name).strip()

    def test_validate_templates_passes(self):
        validate_templates()

    def test_unknown_template_rejected(self):
        with pytest.raises(ConfigError):
            template_body("nonexistent")

    @pytest.mark.parametrize("name", TEMPLATE_NAMES)
    def test_renders_with_all_blocks_enabled(self, name):
        text = render_template(name, filler(name), ALL_BLOCKS)
        assert text.endswith("\n")
        for field in REQUIRED_FIELDS[name]:
            assert f"<{field}>" in text or field in (
                "diff_text", "detail_text"
            ), f"{name} lost {field}"


class TestBlocks:
    def test_disabled_block_removed(self):
        with_marks = render_template(
            "diff",
            {"i_prev": 1, "i_cur": 2, "supp_prev": "s1", "supp_cur": "s2",
             "overview": "ov"},
            frozenset({"marks", "overview"}),
        )
        without = render_template(
            "diff", {"i_prev": 1, "i_cur": 2}, frozenset()
        )
        assert "numeric ID" in with_marks and "s1" in with_marks and "ov" in with_marks
        assert "ID" not in without and "s1" not in without and "ov" not in without

    def test_merge_variants_are_exclusive(self):
        both = render_template(
            "merge", {"diff_text": "D", "detail_text": "T"}, frozenset({"both"}))
        detail_only = render_template(
            "merge", {"detail_text": "T"}, frozenset({"detail_only"}))
        assert "D" in both and "T" in both
        assert "T" in detail_only and "D" not in detail_only

    def test_required_field_inside_disabled_block_is_waived(self):
        # overview is required but lives in an optional block
        text = render_template("detail", {"i_cur": 3, "supp_cur": "s"}, frozenset({"marks"}))
        assert "overview" not in text.lower()


class TestSubstitution:
    def test_missing_required_field_rejected(self):
        with pytest.raises(ConfigError):
            render_template("overview", {}, frozenset())

    def test_literal_json_braces_survive(self):
        text = render_template(
            "judge",
            {"caption": "c", "question": "q", "options": "A. x"},
            frozenset(),
        )
        assert '{"answer": "<A|B|C|D|E>"}' in text

    def test_braces_in_values_stay_verbatim(self):
        text = render_template("overview", {"n": '{"k": [1]}'}, frozenset())
        assert '{"k": [1]}' in text

    def test_blank_runs_collapse(self):
        text = render_template("merge", {"detail_text": "T"}, frozenset({"detail_only"}))
        assert "\n\n\n" not in text
