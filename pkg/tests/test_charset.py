from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mxspot.charset import (DIGITS, PAPER_SINGLE_HEAD, PAPER_TABLE1, PAPER_TABLE1_MILLIONS, BudgetInfeasible,
                            BudgetQuery, CharsetTable, HeadConfig, ScriptId, T_MAX, build_charsets,
                            count_parameters, encode_word, head_parameter_count, match_budget, shared_block)
from mxspot.lpn import LpnConfig
from mxspot.scenegen import ALPHABET_SIZES, DatasetManifest, WordSampler, corpus, generate_scene


def test_tie_broken_by_codepoint():
    t = build_charsets([("aab", "Latin"), ("b", "Latin")], punctuation=".")[ScriptId.Latin]
    assert t.characters[:2] == ("a", "b")
    assert "".join(t.characters[2:]) == DIGITS + "."


def test_chinese_tie_order():
    t = build_charsets([("你好", "Chinese")])[ScriptId.Chinese]
    assert t.characters[:2] == ("你", "好")


def test_frequency_order_descending():
    t = build_charsets([("abbccc", "Latin")], punctuation="")[ScriptId.Latin]
    assert t.characters[:3] == ("c", "b", "a")


def test_errors():
    with pytest.raises(ValueError):
        build_charsets([])
    with pytest.raises(ValueError):
        build_charsets([("ab", "Klingon")])


def test_generator_corpus_sizes_match_alphabets():
    m = DatasetManifest(root="", train=0, test=0, image_size=256, max_words=8)
    sampler = WordSampler(m)
    samples = [generate_scene(m, [11, 0, i], sampler) for i in range(400)]
    words = corpus(samples)
    tables = build_charsets(words)
    shared = set(shared_block())
    for sid, table in tables.items():
        # independent recount
        seen = Counter(c for text, s in words if s == sid for c in text if c not in shared)
        assert table.size - table.n_shared == len(seen)
        assert len(seen) <= ALPHABET_SIZES[sid]
    # with enough words every small alphabet is exhausted
    assert tables[ScriptId.Symbol].size == ALPHABET_SIZES[ScriptId.Symbol] + len(shared)


def test_shared_block_contiguous_in_every_table():
    tables = build_charsets([("ab", "Latin"), ("你", "Chinese")])
    block = tuple(shared_block())
    for t in tables.values():
        assert t.characters[t.size - t.n_shared:] == block


def test_encode_supported():
    t = build_charsets([("ab", "Latin")])[ScriptId.Latin]
    seq = encode_word("ab", t)
    assert list(seq.indices) == [t.index_of("a"), t.index_of("b"), t.eos]
    assert seq.supported.tolist() == [True, True, True]


def test_encode_unsupported_flagged():
    t = build_charsets([("ab", "Latin")])[ScriptId.Latin]
    seq = encode_word("a€b", t)
    assert seq.supported.tolist() == [True, False, True, True]
    assert seq.indices[1] == t.pad


def test_encode_truncates():
    t = build_charsets([("a", "Latin")])[ScriptId.Latin]
    assert len(encode_word("a" * 40, t)) == T_MAX == 32


@settings(max_examples=60, deadline=None)
@given(st.text(alphabet="abcdefg0123.", min_size=1, max_size=40))
def test_encode_decode_roundtrip(word):
    t = build_charsets([("abcdefg", "Latin")])[ScriptId.Latin]
    seq = encode_word(word, t)
    assert t.decode_indices(seq.indices) == word[: T_MAX - 1]
    assert all(t.index_of(t.decode(i)) == i for i in range(t.size))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(list("xyzあい你€-")), min_size=1, max_size=12))
def test_file_roundtrip(chars):
    t = CharsetTable(ScriptId.Japanese, tuple(dict.fromkeys(chars)), 1)
    assert CharsetTable.loads(t.dumps()) == t
    assert CharsetTable.loads(t.dumps()).dumps() == t.dumps()


def test_file_format_header():
    t = build_charsets([("ab", "Latin")], punctuation=".")[ScriptId.Latin]
    lines = t.dumps().splitlines()
    assert lines[0].startswith(f"script=Latin size={t.size}")
    assert lines[1] == "U+0061 a"


# ---------------------------------------------------------------------------
# parameter accounting against Table 1


@pytest.mark.parametrize("sid", list(ScriptId))
def test_table1_heads_within_20_percent(sid):
    n = count_parameters(PAPER_TABLE1[sid])
    ref = PAPER_TABLE1_MILLIONS[sid.name] * 1e6
    assert abs(n - ref) / ref <= 0.20


def test_single_head_within_20_percent():
    n = count_parameters(PAPER_SINGLE_HEAD)
    assert abs(n - 12.6e6) / 12.6e6 <= 0.20


def test_lpn_within_30_percent():
    n = count_parameters(LpnConfig())
    assert abs(n - 0.11e6) / 0.11e6 <= 0.30


def test_count_monotone():
    base = head_parameter_count(100, 50, 60)
    assert head_parameter_count(101, 50, 60) > base
    assert head_parameter_count(100, 51, 60) > base
    assert head_parameter_count(100, 50, 61) > base


def _table1_total():
    return sum(count_parameters(c) for c in PAPER_TABLE1.values()) + count_parameters(LpnConfig())


def _brute_budget(q):
    best = None
    for e in range(q.embed_range[0], q.embed_range[1] + 1):
        for h in range(q.hidden_range[0], q.hidden_range[1] + 1):
            err = abs(head_parameter_count(q.charset_size, e, h, q.channels, q.pooled) - q.target) / q.target
            if best is None or err < best[0]:
                best = (err, e, h)
    return best


def test_match_budget_parity_with_table1():
    q = BudgetQuery(_table1_total(), 9000, (300, 500), (400, 600))
    e, h = match_budget(q)
    n = head_parameter_count(9000, e, h)
    assert abs(n - q.target) / q.target <= 0.02
    err, _, _ = _brute_budget(BudgetQuery(q.target, 9000, (e - 3, e + 3), (h - 3, h + 3)))
    assert abs(n - q.target) / q.target == pytest.approx(err)


def test_match_budget_fixed_point():
    c = HeadConfig(ScriptId.Latin, 250, 150, 256)
    assert match_budget(BudgetQuery(count_parameters(c), 250, (140, 160), (250, 260))) == (150, 256)


def test_match_budget_matches_exhaustive_search():
    rng = np.random.default_rng(0)
    for _ in range(5):
        q = BudgetQuery(int(rng.integers(20_000, 60_000)), int(rng.integers(10, 200)), (1, 40), (1, 40),
                        channels=16, pooled=8)
        try:
            e, h = match_budget(q)
        except BudgetInfeasible:
            assert _brute_budget(q)[0] > 0.02
            continue
        err = abs(head_parameter_count(q.charset_size, e, h, 16, 8) - q.target) / q.target
        assert err == pytest.approx(_brute_budget(q)[0])


def test_match_budget_infeasible():
    with pytest.raises(BudgetInfeasible):
        match_budget(BudgetQuery(10 * head_parameter_count(50, 8, 8), 50, (1, 8), (1, 8)))
