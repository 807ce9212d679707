"""Keyword-conditioned quatrain generation via prosody-constrained beam search.

The decoder runs over a fixed position plan: genre-many characters per line,
a SEP token between lines, stop after line 4. Structure is therefore a hard
guarantee. Tone and rhyme are enforced by masking the output distribution;
when a mask would remove all probability mass the constraints are relaxed in
the order rhyme -> tone, and every relaxation is logged.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import BOS, N_RESERVED, SEP, UNK, Genre, Poem
from .model import decode_step, encode, init_decoder_state
from .prosody import Tone, templates_for

log = logging.getLogger(__name__)


@dataclass
class GenRequest:
    keywords: str
    genre: Genre
    beam_width: int = 1
    tone: bool = True
    rhyme: bool = True
    seed: int = 0
    sep_keywords: bool = False     # insert SEP between whitespace-split keywords

    def __post_init__(self):
        if not self.keywords.strip():
            raise ValueError("keywords must be non-empty")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")


@dataclass
class ProsodyRules:
    tone_dict: object
    templates: list


class GenerationError(Exception):
    pass


def position_plan(genre):
    """Step descriptors: ('char', line, pos) and ('sep',) entries."""
    L = genre.value
    plan = []
    for line in range(4):
        if line > 0:
            plan.append(("sep", line, -1))
        for pos in range(L):
            plan.append(("char", line, pos))
    return plan


@dataclass
class _Hyp:
    tokens: list
    state: object
    prev: int
    logp: float
    template: object = None
    rhyme_group: str = None
    relaxations: list = field(default_factory=list)


def constraint_mask(kind, line, pos, dist, vocab, tone_dict, template,
                    rhyme_group, tone_on, rhyme_on, genre):
    """Mask and renormalize one step's distribution.

    Structure masking (reserved tokens at char positions, everything but SEP
    at separator positions) is unconditional. Tone masking follows the bound
    template's slot; rhyme masking applies at the final characters of lines 2
    and 4 (group bound by line 2, matched by line 4). If all mass is removed,
    constraints are relaxed rhyme first, then tone; relaxations are returned.
    """
    p = np.asarray(dist, dtype=np.float64).copy()
    relaxations = []
    if kind == "sep":
        mask = np.zeros_like(p)
        mask[SEP] = 1.0
        p = p * mask
        if p.sum() <= 0.0:
            p = mask            # SEP forced even at zero model mass
        return p / p.sum(), relaxations

    structural = np.zeros_like(p)
    structural[N_RESERVED:] = 1.0

    def tone_mask():
        m = np.ones_like(p)
        if tone_on and template is not None:
            slot = template.slot(line, pos)
            if slot != "*":
                for idx in range(N_RESERVED, p.shape[0]):
                    t = tone_dict.tone(vocab.char(idx))
                    if t != Tone.UNKNOWN and t.value != slot:
                        m[idx] = 0.0
        return m

    def rhyme_mask():
        m = np.ones_like(p)
        L = genre.value
        if rhyme_on and pos == L - 1 and line in (1, 3):
            for idx in range(N_RESERVED, p.shape[0]):
                g = tone_dict.rhyme_group(vocab.char(idx))
                if line == 1:
                    if g is None:       # group must be bindable
                        m[idx] = 0.0
                else:
                    if g is None or g != rhyme_group:
                        m[idx] = 0.0
        return m

    masked = p * structural * tone_mask() * rhyme_mask()
    if masked.sum() <= 0.0 and rhyme_on:
        relaxations.append({"line": line, "pos": pos, "dropped": "rhyme"})
        masked = p * structural * tone_mask()
    if masked.sum() <= 0.0 and tone_on:
        relaxations.append({"line": line, "pos": pos, "dropped": "tone"})
        masked = p * structural
    if masked.sum() <= 0.0:
        # model put zero mass on every character token; fall back to uniform
        relaxations.append({"line": line, "pos": pos, "dropped": "model"})
        masked = structural.copy()
    return masked / masked.sum(), relaxations


def beam_search_generate(req, mparams, vocab, rules):
    """Generate one quatrain. Returns (Poem, log_records).

    Deterministic given req.seed; the seed only breaks exact score ties.
    """
    cfg = mparams.cfg
    nodes = mparams.wrap()
    keywords = req.keywords.split() if req.sep_keywords else ["".join(req.keywords.split())]
    ids = []
    for ki, kw in enumerate(keywords):
        if ki > 0:
            ids.append(SEP)
        for c in kw:
            idx = vocab.id(c)
            if idx == UNK:
                log.warning("keyword char %r not in vocabulary; using UNK", c)
            ids.append(idx)
    enc = encode(ids, nodes, cfg)
    s0 = init_decoder_state(enc, req.genre, nodes, mparams.indicators)

    if req.tone:
        bindings = templates_for(rules.templates, req.genre)
        if not bindings:
            raise GenerationError("no tonal templates for genre %s" % req.genre.name)
    else:
        bindings = [None]
    rng = np.random.Generator(np.random.PCG64(req.seed))
    plan = position_plan(req.genre)
    beam = [_Hyp(tokens=[], state=s0, prev=BOS, logp=0.0, template=t) for t in bindings]
    records = []

    for step, (kind, line, pos) in enumerate(plan):
        pool = []
        step_rec = {"step": step, "kind": kind, "line": line, "pos": pos, "candidates": []}
        for hyp in beam:
            s_new, dist, info = decode_step(hyp.state, hyp.prev, enc, nodes, cfg)
            masked, relax = constraint_mask(
                kind, line, pos, dist.value, vocab, rules.tone_dict,
                hyp.template, hyp.rhyme_group, req.tone, req.rhyme, req.genre)
            if relax:
                step_rec.setdefault("relaxations", []).extend(relax)
            if kind == "sep":
                cand_ids = [SEP]
            else:
                k = min(req.beam_width, int((masked > 0).sum()))
                cand_ids = np.argsort(masked)[::-1][:k]
            for idx in cand_ids:
                idx = int(idx)
                logp = hyp.logp + float(np.log(masked[idx]))
                group = hyp.rhyme_group
                if (kind == "char" and line == 1 and pos == req.genre.value - 1
                        and rules.tone_dict is not None):
                    group = rules.tone_dict.rhyme_group(vocab.char(idx))
                pool.append((logp, _Hyp(
                    tokens=hyp.tokens + [idx], state=s_new, prev=idx, logp=logp,
                    template=hyp.template, rhyme_group=group,
                    relaxations=hyp.relaxations + relax)))
            step_rec["candidates"].append({
                "prefix": "".join(vocab.char(t) for t in hyp.tokens if t >= N_RESERVED),
                "alpha_h": np.round(info["alpha_h"], 6).tolist(),
                "alpha_x": (np.round(info["alpha_x"], 6).tolist()
                            if info["alpha_x"] is not None else None),
            })
        if not pool:
            raise GenerationError("beam exhausted at step %d" % step)
        tie = rng.random(len(pool))
        order = sorted(range(len(pool)), key=lambda i: (-pool[i][0], tie[i]))
        beam = [pool[i][1] for i in order[:req.beam_width]]
        records.append(step_rec)

    best = beam[0]
    L = req.genre.value
    chars = [vocab.char(t) for t in best.tokens if t != SEP]
    lines = ["".join(chars[i * L:(i + 1) * L]) for i in range(4)]
    poem = Poem(genre=req.genre, lines=lines, source_id="generated")
    records.append({"final_logp": best.logp,
                    "template": best.template.template_id if best.template else None,
                    "rhyme_group": best.rhyme_group,
                    "relaxations": best.relaxations})
    return poem, records


def log_records_to_jsonl(records):
    return "\n".join(json.dumps(r, ensure_ascii=False) for r in records)
