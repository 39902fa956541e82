"""Object-class mentions and their singular/plural form in captions.

A tagger turns a caption into ``(token, NN|NNS)`` nouns; :func:`analyze`
maps each noun onto a lexicon class and records its grammatical number.
The built-in :class:`LexiconTagger` needs no NLP model: it recognises the
surface forms listed in a :class:`ClassLexicon`.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Protocol, Sequence

from .exceptions import ParseError
from .geometry import ObjectClass

SINGULAR = "singular"
PLURAL = "plural"
EXEMPT = "exempt"

_TOKEN_RE = re.compile(r"[a-z]+(?:'[a-z]+)?")

SINGULAR_CUES = frozenset({"a", "an", "one", "single", "another", "this", "that", "lone", "each", "every"})
PLURAL_CUES = frozenset({
    "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "several", "many", "some", "few", "these", "those", "both", "multiple", "numerous", "various",
    "dozens", "lots", "two's", "pair",
})
COLLECTIVES = frozenset({"group", "herd", "flock", "couple", "bunch", "lot", "lots", "number",
                         "pack", "pair", "crowd", "team", "family", "line", "row", "pile", "set"})


def pluralize(noun: str) -> str:
    """Regular English plural; irregular forms must be listed explicitly."""
    if re.search(r"[^aeiou]y$", noun):
        return noun[:-1] + "ies"
    if re.search(r"(s|x|z|ch|sh)$", noun):
        return noun + "es"
    return noun + "s"


@dataclass(frozen=True)
class ClassLexicon:
    """Known object classes with their surface forms.

    ``singular_forms`` / ``plural_forms`` map every recognised surface token
    to its class. A token present in both tables (``sheep``) is number
    invariant; one in ``pluralia_tantum`` (``scissors``) is exempt from form
    checks.
    """

    classes: Mapping[str, ObjectClass]
    plural_map: Mapping[str, tuple[str, ...]]
    synonym_map: Mapping[str, str]
    pluralia_tantum: frozenset
    singular_forms: Mapping[str, str] = field(repr=False, default_factory=dict)
    plural_forms: Mapping[str, str] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        for surface, target in self.synonym_map.items():
            if target not in self.classes:
                raise ValueError(f"synonym {surface!r} targets unknown class {target!r}")

    def __len__(self):
        return len(self.classes)

    def canonical(self, token: str) -> Optional[str]:
        """Class name for a surface token, or ``None``. Idempotent on class names."""
        token = token.lower()
        if token in self.classes:
            return token
        if token in self.synonym_map:
            return self.synonym_map[token]
        return self.singular_forms.get(token) or self.plural_forms.get(token)

    def is_invariant(self, token: str) -> bool:
        return token in self.singular_forms and token in self.plural_forms

    def super_category(self, name: str) -> str:
        cls = self.classes.get(name)
        if cls is None or cls.super_category is None:
            return name
        return cls.super_category

    def subset(self, names: Iterable[str]) -> "ClassLexicon":
        keep = set(names)
        return build_lexicon(
            [{"name": n, "super_category": self.classes[n].super_category,
              "plurals": list(self.plural_map.get(n, ())),
              "singulars": [s for s, c in self.singular_forms.items()
                            if c == n and (s == n or s not in self.synonym_map)]}
             for n in self.classes if n in keep],
            synonyms={s: c for s, c in self.synonym_map.items() if c in keep and s not in self.classes},
            pluralia_tantum=[p for p in self.pluralia_tantum if self.canonical(p) in keep],
        )

    @classmethod
    def load(cls, path=None) -> "ClassLexicon":
        """Load a lexicon JSON file, or the bundled COCO single-word lexicon."""
        if path is None:
            text = resources.files("icmt").joinpath("data/lexicon.json").read_text(encoding="utf-8")
            source = "bundled lexicon"
        else:
            text = Path(path).read_text(encoding="utf-8")
            source = str(path)
        try:
            data = json.loads(text)
            return build_lexicon(data["classes"], data.get("synonyms", {}), data.get("pluralia_tantum", []))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{source}: {exc}") from exc


def build_lexicon(classes: Sequence[Mapping], synonyms: Optional[Mapping] = None,
                  pluralia_tantum: Iterable[str] = ()) -> ClassLexicon:
    """Build a lexicon from the JSON-shaped description.

    ``classes`` entries are ``{name, super_category, plurals, singulars?}``;
    ``synonyms`` values are either a class name (regular plural assumed) or
    ``{"class": ..., "plurals": [...]}``.
    """
    pt = frozenset(p.lower() for p in pluralia_tantum)
    by_name: dict[str, ObjectClass] = {}
    plural_map: dict[str, tuple[str, ...]] = {}
    singular_forms: dict[str, str] = {}
    plural_forms: dict[str, str] = {}
    for entry in classes:
        obj = ObjectClass(entry["name"], entry.get("super_category"))
        by_name[obj.name] = obj
        plurals = tuple(p.lower() for p in entry.get("plurals") or [pluralize(obj.name)])
        plural_map[obj.name] = plurals
        singulars = entry.get("singulars")
        if singulars is None:
            singulars = [] if obj.name in pt else [obj.name]
        for s in singulars:
            singular_forms[s.lower()] = obj.name
        for p in plurals:
            plural_forms[p] = obj.name
    synonym_map: dict[str, str] = {}
    for surface, spec in (synonyms or {}).items():
        surface = surface.lower()
        if isinstance(spec, str):
            target, plurals = spec.lower(), [pluralize(surface)]
        else:
            target, plurals = spec["class"].lower(), spec.get("plurals") or [pluralize(surface)]
        synonym_map[surface] = target
        singular_forms.setdefault(surface, target)
        for p in plurals:
            p = p.lower()
            synonym_map[p] = target
            plural_forms.setdefault(p, target)
    return ClassLexicon(by_name, plural_map, synonym_map, pt, singular_forms, plural_forms)


@dataclass(frozen=True)
class TaggedNoun:
    token: str
    tag: str  # "NN" or "NNS"
    exempt: bool = False
    undecided: bool = False
    position: int = -1


class Tagger(Protocol):
    def tag(self, caption: str) -> list[TaggedNoun]: ...


def tokenize(caption: str) -> list[str]:
    return _TOKEN_RE.findall(caption.lower())


class LexiconTagger:
    """Tags lexicon surface forms as NN/NNS by table lookup.

    Number-invariant forms (``sheep``) are resolved from the words just
    before them: ``a sheep`` is singular, ``two sheep`` / ``a herd of
    sheep`` plural; otherwise singular and marked ``undecided``.
    """

    lookback = 3

    def __init__(self, lexicon: ClassLexicon):
        self.lexicon = lexicon

    def _invariant_number(self, tokens: list[str], i: int) -> Optional[str]:
        for j in range(i - 1, max(-1, i - 1 - self.lookback), -1):
            prev = tokens[j]
            if prev == "of" and j > 0 and tokens[j - 1] in COLLECTIVES:
                return "NNS"
            if prev in SINGULAR_CUES:
                return "NN"
            if prev in PLURAL_CUES:
                return "NNS"
            if self.lexicon.canonical(prev) is not None or prev in ("and", "with", "of", "on", "in"):
                break
        return None

    def tag(self, caption: str) -> list[TaggedNoun]:
        tokens = tokenize(caption)
        out = []
        lex = self.lexicon
        for i, tok in enumerate(tokens):
            in_sing = tok in lex.singular_forms
            in_plur = tok in lex.plural_forms
            if not (in_sing or in_plur):
                continue
            if tok in lex.pluralia_tantum:
                out.append(TaggedNoun(tok, "NNS", exempt=True, position=i))
            elif in_sing and in_plur:
                tag = self._invariant_number(tokens, i)
                out.append(TaggedNoun(tok, tag or "NN", undecided=tag is None, position=i))
            elif in_plur:
                out.append(TaggedNoun(tok, "NNS", position=i))
            else:
                out.append(TaggedNoun(tok, "NN", position=i))
        return out


class PairTagger:
    """Adapts any ``caption -> [(token, xpos), ...]`` tagger (e.g. an NLP
    toolkit's XPOS output) to the :class:`Tagger` interface, keeping NN/NNS only."""

    def __init__(self, fn):
        self.fn = fn

    def tag(self, caption: str) -> list[TaggedNoun]:
        return [TaggedNoun(tok.lower(), pos, position=i)
                for i, (tok, pos) in enumerate(self.fn(caption)) if pos in ("NN", "NNS")]


def extract_nouns(caption: str, tagger: Tagger) -> list[TaggedNoun]:
    return [n for n in tagger.tag(caption) if n.tag in ("NN", "NNS")]


@dataclass(frozen=True)
class CaptionAnalysis:
    """Classes mentioned in one caption, each with a grammatical number.

    ``mentions`` maps class name to ``singular``, ``plural`` or ``exempt``.
    ``conflicts`` lists classes seen in both numbers (recorded as plural);
    ``undecided`` lists invariant-form mentions whose number was guessed.
    """

    caption: str
    mentions: Mapping[str, str]
    nouns: tuple[TaggedNoun, ...] = ()
    conflicts: frozenset = frozenset()
    undecided: frozenset = frozenset()

    @property
    def classes(self) -> frozenset:
        return frozenset(self.mentions)

    def form(self, name: str) -> Optional[str]:
        return self.mentions.get(name)

    def to_dict(self) -> dict:
        return {"caption": self.caption, "mentions": dict(sorted(self.mentions.items())),
                "conflicts": sorted(self.conflicts), "undecided": sorted(self.undecided)}


def analyze(caption: str, lexicon: ClassLexicon, tagger: Optional[Tagger] = None) -> CaptionAnalysis:
    """Build the class set and singular/plural mapping of ``caption``."""
    if not len(lexicon):
        raise ValueError("lexicon is empty")
    tagger = tagger or LexiconTagger(lexicon)
    text = caption.strip().lower()
    nouns = extract_nouns(text, tagger) if text else []
    mentions: dict[str, str] = {}
    conflicts = set()
    undecided = set()
    for noun in nouns:
        name = lexicon.canonical(noun.token)
        if name is None:
            continue
        if noun.exempt or noun.token in lexicon.pluralia_tantum:
            mentions.setdefault(name, EXEMPT)
            continue
        form = PLURAL if noun.tag == "NNS" else SINGULAR
        if noun.undecided:
            undecided.add(name)
        prev = mentions.get(name)
        if prev is None or prev == EXEMPT:
            mentions[name] = form
        elif prev != form:
            mentions[name] = PLURAL
            conflicts.add(name)
    return CaptionAnalysis(caption=text, mentions=mentions, nouns=tuple(nouns),
                           conflicts=frozenset(conflicts), undecided=frozenset(undecided))


def class_set(a: CaptionAnalysis) -> frozenset:
    return frozenset(a.mentions)


def make_analysis(mentions: Mapping[str, str], caption: str = "") -> CaptionAnalysis:
    """Analysis built directly from a mention map (fixtures, brute-force checks)."""
    return CaptionAnalysis(caption=caption, mentions=dict(mentions))
