import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modcrf.errors import ConfigError, ConsistencyError, ParseError, ValidationError
from modcrf.labels import (
    MISSING,
    OUTSIDE,
    FullLabel,
    Scheme,
    bio2_to_bioes,
    bioes_to_bio2,
    build_label_space,
    compose,
    decompose,
    seg_bio2_to_bioes,
    seg_bioes_to_bio2,
    validate_sequence,
)

TYPES = ("pos", "neg", "neu")


@st.composite
def bio2_sequences(draw, types=TYPES, max_len=12):
    """Well-formed BIO2 sequences built span by span."""
    length = draw(st.integers(1, max_len))
    out = []
    while len(out) < length:
        if draw(st.booleans()):
            out.append(OUTSIDE)
        else:
            typ = draw(st.sampled_from(types))
            span = draw(st.integers(1, 4))
            out += [FullLabel("B" if i == 0 else "I", typ) for i in range(span)]
    return out[:length]


def labels(text):
    return [FullLabel.parse(t) for t in text.split()]


# -- parsing and composition ------------------------------------------------------------
def test_parse_and_render():
    assert FullLabel.parse("B-positive") == FullLabel("B", "positive")
    assert str(FullLabel("S", "neg")) == "S-neg"
    assert FullLabel.parse("O") is OUTSIDE
    assert str(OUTSIDE) == "O"


@pytest.mark.parametrize("bad", ["X-pos", "B", "B-", "-pos", "O-pos"])
def test_parse_rejects_malformed(bad):
    with pytest.raises(ParseError):
        FullLabel.parse(bad)


def test_type_names_may_contain_separator():
    assert decompose("B-multi-word") == ("B", "multi-word")


def test_compose_rejects_inconsistent_pairs():
    with pytest.raises(ConsistencyError):
        compose("O", "pos")
    with pytest.raises(ConsistencyError):
        compose("B", "O")
    with pytest.raises(ConsistencyError):
        compose("Z", "pos")


def test_missing_is_a_singleton():
    assert type(MISSING)() is MISSING


@settings(max_examples=200)
@given(bio2_sequences())
def test_compose_decompose_roundtrip(seq):
    for y in seq:
        assert compose(*decompose(y)) == y
        seg, typ = decompose(y)
        assert (seg == "O") == (typ == "O")


# -- schemes --------------------------------------------------------------------------
def test_bio2_to_bioes_example():
    seq = labels("B-pos I-pos O B-neg B-neg I-neg I-neg O")
    assert [str(y) for y in bio2_to_bioes(seq)] == "B-pos E-pos O S-neg B-neg I-neg E-neg O".split()


def test_bioes_to_bio2_is_total():
    assert [str(y) for y in bioes_to_bio2(labels("S-pos E-neg I-pos"))] == ["B-pos", "I-neg", "I-pos"]


@settings(max_examples=300)
@given(bio2_sequences())
def test_scheme_roundtrips(seq):
    bioes = bio2_to_bioes(seq)
    assert bioes_to_bio2(bioes) == seq
    assert bio2_to_bioes(bioes_to_bio2(bioes)) == bioes
    assert validate_sequence(seq, "BIO2") == []
    assert validate_sequence(bioes, "BIOES") == []


@settings(max_examples=200)
@given(bio2_sequences())
def test_segment_only_conversion_agrees_with_full(seq):
    segs = [y.seg for y in seq]
    assert seg_bio2_to_bioes(segs) == [y.seg for y in bio2_to_bioes(seq)]
    assert seg_bioes_to_bio2(seg_bio2_to_bioes(segs)) == segs


@pytest.mark.parametrize(
    "text",
    ["I-pos", "O I-pos", "B-pos I-neg"],
)
def test_invalid_bio2_detected(text):
    assert validate_sequence(labels(text), "BIO2")
    with pytest.raises(ValidationError) as info:
        bio2_to_bioes(labels(text))
    assert info.value.violations


@pytest.mark.parametrize(
    "text",
    ["B-pos", "B-pos O", "I-pos E-pos", "B-pos E-neg", "B-pos S-pos", "E-pos"],
)
def test_invalid_bioes_detected(text):
    assert validate_sequence(labels(text), "BIOES")


def test_bioes_prefix_outside_bio2_alphabet():
    problems = validate_sequence(labels("S-pos"), "BIO2")
    assert problems and "alphabet" in problems[0].message


def test_seg_conversion_rejects_dangling_inside():
    with pytest.raises(ValidationError):
        seg_bio2_to_bioes(["O", "I"])


# -- label spaces -----------------------------------------------------------------------
def test_label_space_sizes():
    assert len(build_label_space("BIOES", ("a", "b", "c", "d"))) == 17
    assert len(build_label_space("BIO2", ("a", "b", "c"))) == 7
    space = build_label_space("BIOES", TYPES)
    assert space.num_seg == 5 and space.num_typ == 4
    assert space.full[0] is OUTSIDE
    assert space.full_index("E-neg") == space.full.index(FullLabel("E", "neg"))


@settings(max_examples=50)
@given(st.lists(st.text(alphabet="abcdefgh", min_size=1, max_size=5), min_size=1, max_size=6, unique=True))
def test_label_space_size_formula(types):
    for scheme, n_prefix in ((Scheme.BIO2, 2), (Scheme.BIOES, 4)):
        space = build_label_space(scheme, types)
        assert len(space) == 1 + n_prefix * len(types)
        assert len(set(space.full)) == len(space)


@pytest.mark.parametrize("types", [(), ("a", "a"), ("O",), ("has space",), ("",)])
def test_label_space_rejects_bad_types(types):
    with pytest.raises(ConfigError):
        build_label_space("BIO2", types)


def test_unknown_scheme():
    with pytest.raises(ConfigError):
        Scheme.parse("IOB1")


def test_lookup_outside_space():
    space = build_label_space("BIO2", TYPES)
    with pytest.raises(ParseError):
        space.full_index("E-pos")
    with pytest.raises(ParseError):
        space.typ_index("other")
