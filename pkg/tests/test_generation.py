"""Constrained beam search: masks, structure guarantees, determinism."""

import logging

import numpy as np
import pytest

from conftest import data_path
from qgen.corpus import (BOS, N_RESERVED, SEP, Genre, Poem,
                         build_training_sequence, build_vocab)
from qgen.generation import (GenerationError, GenRequest, ProsodyRules,
                             beam_search_generate, constraint_mask,
                             log_records_to_jsonl, position_plan)
from qgen.model import ModelConfig, ModelParams, decode_step, encode, init_decoder_state
from qgen.prosody import load_templates, load_tone_dict, validate_structure

POEMS = [
    Poem(Genre.FIVE_CHAR, ["月黑雁飞高", "单于夜遁逃", "欲将轻骑逐", "大雪满弓刀"]),
    Poem(Genre.FIVE_CHAR, ["床前明月光", "疑是地上霜", "举头望明月", "低头思故乡"]),
    Poem(Genre.SEVEN_CHAR, ["朝辞白帝彩云间", "千里江陵一日还",
                            "两岸猿声啼不住", "轻舟已过万重山"]),
]


@pytest.fixture(scope="module")
def world():
    vocab = build_vocab(POEMS)
    cfg = ModelConfig(vocab_size=len(vocab), d=8, H=6, H_dec=10, seed=0)
    mparams = ModelParams.initialize(cfg)
    rules = ProsodyRules(tone_dict=load_tone_dict(data_path("tone_dict.tsv")),
                         templates=load_templates(data_path("templates.txt")))
    return vocab, mparams, rules


def test_position_plan():
    for genre in (Genre.FIVE_CHAR, Genre.SEVEN_CHAR):
        plan = position_plan(genre)
        assert len(plan) == 4 * genre.value + 3
        assert sum(1 for p in plan if p[0] == "sep") == 3
        chars = [p for p in plan if p[0] == "char"]
        assert chars[0] == ("char", 0, 0)
        assert chars[-1] == ("char", 3, genre.value - 1)


def test_request_validation():
    with pytest.raises(ValueError):
        GenRequest(keywords="  ", genre=Genre.FIVE_CHAR)
    with pytest.raises(ValueError):
        GenRequest(keywords="月", genre=Genre.FIVE_CHAR, beam_width=0)


def test_mask_sep_position(world):
    vocab, _, rules = world
    dist = np.full(len(vocab), 1.0 / len(vocab))
    p, relax = constraint_mask("sep", 1, -1, dist, vocab, rules.tone_dict,
                               None, None, True, True, Genre.FIVE_CHAR)
    assert p[SEP] == 1.0 and p.sum() == 1.0
    assert relax == []


def test_mask_excludes_reserved_tokens(world):
    vocab, _, rules = world
    dist = np.full(len(vocab), 1.0 / len(vocab))
    p, relax = constraint_mask("char", 0, 0, dist, vocab, rules.tone_dict,
                               None, None, False, False, Genre.FIVE_CHAR)
    assert np.all(p[:N_RESERVED] == 0.0)
    assert abs(p.sum() - 1.0) < 1e-12
    assert relax == []


def test_mask_enforces_tone_slot(world):
    vocab, _, rules = world
    template = [t for t in rules.templates if t.template_id == "wu_3"][0]
    assert template.slot(0, 4) == "P"      # known-tone slot
    dist = np.full(len(vocab), 1.0 / len(vocab))
    p, _ = constraint_mask("char", 0, 4, dist, vocab, rules.tone_dict,
                           template, None, True, True, Genre.FIVE_CHAR)
    from qgen.prosody import Tone
    for idx in range(N_RESERVED, len(vocab)):
        tone = rules.tone_dict.tone(vocab.char(idx))
        if tone == Tone.ZE:
            assert p[idx] == 0.0
        elif tone == Tone.PING:
            assert p[idx] > 0.0


def test_mask_rhyme_binding_and_match(world):
    vocab, _, rules = world
    dist = np.full(len(vocab), 1.0 / len(vocab))
    # line 2 final: only characters with a known rhyme group stay
    p, _ = constraint_mask("char", 1, 4, dist, vocab, rules.tone_dict,
                           None, None, False, True, Genre.FIVE_CHAR)
    for idx in range(N_RESERVED, len(vocab)):
        known = rules.tone_dict.rhyme_group(vocab.char(idx)) is not None
        assert (p[idx] > 0) == known
    # line 4 final: only the bound group stays
    p, _ = constraint_mask("char", 3, 4, dist, vocab, rules.tone_dict,
                           None, "ao", False, True, Genre.FIVE_CHAR)
    for idx in range(N_RESERVED, len(vocab)):
        assert (p[idx] > 0) == (rules.tone_dict.rhyme_group(vocab.char(idx)) == "ao")


def test_mask_relaxation_order_and_logging(world):
    vocab, _, rules = world
    # all model mass on a reserved token: rhyme drops first, then tone,
    # then the uniform structural fallback
    dist = np.zeros(len(vocab))
    dist[SEP] = 1.0
    template = [t for t in rules.templates if t.template_id == "wu_3"][0]
    p, relax = constraint_mask("char", 3, 4, dist, vocab, rules.tone_dict,
                               template, "ao", True, True, Genre.FIVE_CHAR)
    assert [r["dropped"] for r in relax] == ["rhyme", "tone", "model"]
    assert np.all(p[:N_RESERVED] == 0.0)
    assert abs(p.sum() - 1.0) < 1e-12


def test_generation_structure_and_determinism(world):
    vocab, mparams, rules = world
    for genre in (Genre.FIVE_CHAR, Genre.SEVEN_CHAR):
        req = GenRequest(keywords="月黑雁飞高", genre=genre, beam_width=3, seed=11)
        poem, records = beam_search_generate(req, mparams, vocab, rules)
        assert validate_structure(poem.lines) == genre
        poem2, _ = beam_search_generate(req, mparams, vocab, rules)
        assert poem.lines == poem2.lines
        jsonl = log_records_to_jsonl(records)
        assert len(jsonl.splitlines()) == len(records)
        assert records[-1]["template"] is not None


def test_beam_one_equals_greedy_argmax(world):
    """With constraints off, beam width 1 is the structurally-masked greedy
    decode; replay it by hand and compare token for token."""
    vocab, mparams, rules = world
    req = GenRequest(keywords="床前明月光", genre=Genre.FIVE_CHAR, beam_width=1,
                     tone=False, rhyme=False, seed=0)
    poem, _ = beam_search_generate(req, mparams, vocab, rules)

    cfg = mparams.cfg
    nodes = mparams.wrap()
    enc = encode(vocab.encode("床前明月光"), nodes, cfg)
    s = init_decoder_state(enc, Genre.FIVE_CHAR, nodes, mparams.indicators)
    prev = BOS
    tokens = []
    for kind, _, _ in position_plan(Genre.FIVE_CHAR):
        s, dist, _ = decode_step(s, prev, enc, nodes, cfg)
        if kind == "sep":
            prev = SEP
        else:
            p = dist.value.copy()
            p[:N_RESERVED] = 0.0
            prev = int(np.argmax(p))
            tokens.append(prev)
    expect = "".join(vocab.char(t) for t in tokens)
    assert "".join(poem.lines) == expect


def test_unknown_keyword_char_warns_and_proceeds(world, caplog):
    vocab, mparams, rules = world
    req = GenRequest(keywords="月黑瞾飞高", genre=Genre.FIVE_CHAR, beam_width=1, seed=1)
    with caplog.at_level(logging.WARNING, logger="qgen.generation"):
        poem, _ = beam_search_generate(req, mparams, vocab, rules)
    assert "not in vocabulary" in caplog.text
    assert validate_structure(poem.lines) == Genre.FIVE_CHAR


def test_sep_keywords_mode(world):
    vocab, mparams, rules = world
    req = GenRequest(keywords="月黑 雁飞", genre=Genre.FIVE_CHAR, beam_width=1,
                     seed=2, sep_keywords=True)
    poem, _ = beam_search_generate(req, mparams, vocab, rules)
    assert validate_structure(poem.lines) == Genre.FIVE_CHAR
    # without the flag the whitespace is simply squeezed out
    req2 = GenRequest(keywords="月黑 雁飞", genre=Genre.FIVE_CHAR, beam_width=1, seed=2)
    poem2, _ = beam_search_generate(req2, mparams, vocab, rules)
    assert validate_structure(poem2.lines) == Genre.FIVE_CHAR


def test_no_templates_for_genre_errors(world):
    vocab, mparams, _ = world
    bare = ProsodyRules(tone_dict=None, templates=[])
    req = GenRequest(keywords="月黑雁飞高", genre=Genre.FIVE_CHAR, tone=True)
    with pytest.raises(GenerationError):
        beam_search_generate(req, mparams, vocab, bare)
