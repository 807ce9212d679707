"""Quatrain regulations: structure, Ping/Ze tonal templates, rhyme groups.

Tone dictionary TSV: `char <TAB> P|Z <TAB> rhyme_group` per row. Template
file: blocks of four lines over the alphabet P/Z/*, one block per template,
preceded by a `# id` line; blank lines separate blocks. Characters missing
from the dictionary have Unknown tone and satisfy any slot -- generation must
not be blocked by dictionary gaps, and the compliance report lists them.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

from .corpus import Genre

log = logging.getLogger(__name__)


class Tone(Enum):
    PING = "P"
    ZE = "Z"
    UNKNOWN = "?"


class ProsodyError(Exception):
    pass


class StructureError(ProsodyError):
    pass


class ToneDict:
    """char -> tone and char -> rhyme group, Unknown for anything absent."""

    def __init__(self):
        self.tones = {}
        self.groups = {}

    def tone(self, char):
        return self.tones.get(char, Tone.UNKNOWN)

    def rhyme_group(self, char):
        return self.groups.get(char)

    def __len__(self):
        return len(self.tones)


def load_tone_dict(path):
    td = ToneDict()
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or len(parts[0]) != 1 or parts[1] not in ("P", "Z"):
                raise ProsodyError("malformed tone row at %s:%d: %r" % (path, lineno, line))
            char, tone, group = parts
            if char in td.tones:
                log.warning("duplicate tone entry for %r at line %d; last row wins",
                            char, lineno)
            td.tones[char] = Tone(tone)
            td.groups[char] = group
    return td


@dataclass
class TonalTemplate:
    template_id: str
    genre: Genre
    lines: list           # 4 strings over P/Z/*

    def slot(self, line_idx, pos):
        return self.lines[line_idx][pos]


def load_templates(path):
    templates = []
    block_id = None
    block = []

    def flush():
        nonlocal block_id, block
        if not block:
            return
        if len(block) != 4:
            raise ProsodyError("template %r has %d lines, expected 4" % (block_id, len(block)))
        lengths = {len(l) for l in block}
        if lengths == {5}:
            genre = Genre.FIVE_CHAR
        elif lengths == {7}:
            genre = Genre.SEVEN_CHAR
        else:
            raise ProsodyError("template %r has line lengths %s" % (block_id, sorted(lengths)))
        templates.append(TonalTemplate(block_id or "t%d" % len(templates), genre, list(block)))
        block_id, block = None, []

    with open(path, encoding="utf-8") as f:
        for raw in f:
            line = raw.strip()
            if not line:
                flush()
            elif line.startswith("#"):
                block_id = line.lstrip("#").strip()
            else:
                if set(line) - set("PZ*"):
                    raise ProsodyError("bad template symbols in %r" % line)
                block.append(line)
    flush()
    return templates


def templates_for(templates, genre):
    return [t for t in templates if t.genre == genre]


def validate_structure(lines):
    """Return the genre of 4 x 5 or 4 x 7 character lines, else raise."""
    if len(lines) != 4:
        raise StructureError("expected 4 lines, got %d" % len(lines))
    bad = [(i + 1, len(l)) for i, l in enumerate(lines) if len(l) not in (5, 7)]
    if bad:
        raise StructureError("lines with bad length: %s"
                             % ", ".join("line %d has %d chars" % b for b in bad))
    lengths = {len(l) for l in lines}
    if lengths == {5}:
        return Genre.FIVE_CHAR
    if lengths == {7}:
        return Genre.SEVEN_CHAR
    raise StructureError("mixed line lengths %s" % sorted(lengths))


def _slot_ok(slot, tone):
    if slot == "*" or tone == Tone.UNKNOWN:
        return True
    return tone.value == slot


def match_tonal_template(lines, tone_dict, templates):
    """Best template for the poem and its violation list.

    Each template is scored by the number of satisfied known-tone slots;
    Unknown-tone characters satisfy any slot. Ties break to the lowest
    template id. Violations are (line_idx, pos, expected_slot, found_tone).
    """
    genre = validate_structure(lines)
    cands = templates_for(templates, genre)
    if not cands:
        raise ProsodyError("no templates for genre %s" % genre.name)
    best = None
    best_key = None
    for t in sorted(cands, key=lambda t: t.template_id):
        score = 0
        violations = []
        for li, line in enumerate(lines):
            for pi, char in enumerate(line):
                tone = tone_dict.tone(char)
                if _slot_ok(t.slot(li, pi), tone):
                    score += 1
                else:
                    violations.append((li, pi, t.slot(li, pi), tone.value))
        if best_key is None or score > best_key:
            best_key = score
            best = (t, violations)
    return best


def validate_rhyme(lines, tone_dict, include_line1=False):
    """Lines 2 and 4 must end in the same known rhyme group.

    Returns (rhyme_ok, info); info records the groups found and, optionally,
    whether line 1's last character also rhymes.
    """
    validate_structure(lines)
    g2 = tone_dict.rhyme_group(lines[1][-1])
    g4 = tone_dict.rhyme_group(lines[3][-1])
    info = {"line2_group": g2, "line4_group": g4}
    if g2 is None or g4 is None:
        info["reason"] = "unknown"
        ok = False
    else:
        ok = g2 == g4
        if not ok:
            info["reason"] = "mismatch"
    if include_line1:
        g1 = tone_dict.rhyme_group(lines[0][-1])
        info["line1_group"] = g1
        info["line1_rhymes"] = g1 is not None and g1 == g2
    return ok, info


@dataclass
class ComplianceReport:
    structure_ok: bool
    genre: str = None
    structure_error: str = None
    best_template: str = None
    tone_violations: list = field(default_factory=list)
    rhyme_ok: bool = None
    rhyme_info: dict = field(default_factory=dict)
    unknown_chars: list = field(default_factory=list)

    @property
    def compliant(self):
        return self.structure_ok and not self.tone_violations and bool(self.rhyme_ok)

    def to_dict(self):
        return {"structure_ok": self.structure_ok, "genre": self.genre,
                "structure_error": self.structure_error,
                "best_template": self.best_template,
                "tone_violations": self.tone_violations,
                "rhyme_ok": self.rhyme_ok, "rhyme_info": self.rhyme_info,
                "unknown_chars": self.unknown_chars,
                "compliant": self.compliant}


def compliance_report(lines, tone_dict, templates, include_line1=False):
    """Full check of one poem: structure, then tones and rhyme."""
    try:
        genre = validate_structure(lines)
    except StructureError as e:
        return ComplianceReport(structure_ok=False, structure_error=str(e))
    best, violations = match_tonal_template(lines, tone_dict, templates)
    rhyme_ok, rhyme_info = validate_rhyme(lines, tone_dict, include_line1=include_line1)
    unknown = sorted({c for line in lines for c in line
                      if tone_dict.tone(c) == Tone.UNKNOWN})
    return ComplianceReport(structure_ok=True, genre=genre.name,
                            best_template=best.template_id,
                            tone_violations=violations,
                            rhyme_ok=rhyme_ok, rhyme_info=rhyme_info,
                            unknown_chars=unknown)
