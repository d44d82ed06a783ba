"""Synthetic clinical note generation under four strategies.

Strategies:
  M     - metadata-only template fill, no generation backend.
  M_P1  - template note + option-constrained prompt (tight vocabulary).
  M_P2  - template note + attribute-grounded prompt without forced options.
  P3    - metadata-free prompt: the backend must guess class and attributes.

Backends implement `generate(prompt, seed)`. The seeded mock backend reads the
prompt the way an LLM would (it only sees text, never the record), emits notes
in the same constrained grammar as P1, and exposes a label-corruption rate
that emulates hallucination severity. The remote backend posts prompts to an
HTTP endpoint for real models; tests never use it.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from .corpus import LABEL_CODES, LABEL_NAMES, Corpus, SampleRecord, malignancy
from .utils import derive_seed, sha256_text

STRATEGIES = ("M", "M_P1", "M_P2", "P3")

STRATEGY_DISPLAY = {"M": "M", "M_P1": "M + P1", "M_P2": "M + P2", "P3": "P3"}

_NAME_TO_CODE = {name: code for code, name in LABEL_NAMES.items()}


class NotegenError(ValueError):
    pass


@dataclass(frozen=True)
class AttributeVocabulary:
    """Allowed option sets per lesion attribute, lowercase-normalized."""

    attributes: dict[str, tuple[str, ...]]

    def __post_init__(self):
        normalized = {}
        for attr, options in self.attributes.items():
            if not options:
                raise NotegenError(f"attribute {attr!r} has an empty option set")
            normalized[attr] = tuple(opt.lower() for opt in options)
        object.__setattr__(self, "attributes", normalized)

    def options(self, attr: str) -> tuple[str, ...]:
        return self.attributes[attr]


def default_vocabulary() -> AttributeVocabulary:
    return AttributeVocabulary(
        attributes={
            "symmetry": ("symmetric", "asymmetric", "partially symmetric"),
            "border": ("well-defined", "ill-defined", "irregular", "regular"),
            "color": ("tan", "brown", "dark brown", "black", "blue-gray", "red", "pink", "white"),
            "dermoscopic structures": (
                "pigment network",
                "dots",
                "globules",
                "streaks",
                "blue-white veil",
                "structureless areas",
            ),
            "lesion type": ("macule", "papule", "nodule", "plaque", "patch"),
        }
    )


# Verb used in the constrained sentence grammar, per attribute.
_ATTR_VERB = {
    "symmetry": "is",
    "border": "is",
    "color": "is",
    "dermoscopic structures": "include",
    "lesion type": "is",
}

# Per-class preferred option index for each attribute; the mock backend samples
# the preferred option with high probability so notes carry a class signal
# beyond the class name itself.
_CLASS_PROFILE = {
    "BEK": {"symmetry": 0, "border": 0, "color": 0, "dermoscopic structures": 5, "lesion type": 3},
    "NEV": {"symmetry": 0, "border": 3, "color": 1, "dermoscopic structures": 0, "lesion type": 0},
    "ACK": {"symmetry": 1, "border": 1, "color": 5, "dermoscopic structures": 1, "lesion type": 4},
    "BCC": {"symmetry": 2, "border": 0, "color": 6, "dermoscopic structures": 2, "lesion type": 2},
    "MEL": {"symmetry": 1, "border": 2, "color": 3, "dermoscopic structures": 4, "lesion type": 1},
}


@dataclass(frozen=True)
class ClinicalNote:
    sample_id: str
    text: str
    strategy: str
    prompt: str
    backend_id: str
    prompt_hash: str = ""

    def __post_init__(self):
        if not self.text:
            raise NotegenError(f"empty note text for sample {self.sample_id!r}")
        if self.strategy not in STRATEGIES:
            raise NotegenError(f"unknown strategy {self.strategy!r}")
        if not self.prompt_hash:
            object.__setattr__(self, "prompt_hash", sha256_text(self.prompt))


@dataclass(frozen=True)
class SynthesisFailure:
    sample_id: str
    error: str


@dataclass(frozen=True)
class NoteAudit:
    vocabulary_violations: int
    metadata_contradictions: int
    token_length: int


def render_template(record: SampleRecord, ack_malignant: bool = True) -> ClinicalNote:
    """Fill the metadata template; the subclass clause appears iff available."""
    text = (
        f"The image includes a {malignancy(record.label, ack_malignant)} skin lesion, "
        f"specifically a {LABEL_NAMES[record.label]}"
    )
    if record.subclass:
        text += f" (specifically a {record.subclass.lower()})"
    return ClinicalNote(
        sample_id=record.id, text=text, strategy="M", prompt="", backend_id="template"
    )


def build_prompt(
    record: Optional[SampleRecord],
    strategy: str,
    vocab: Optional[AttributeVocabulary] = None,
    ack_malignant: bool = True,
) -> str:
    """Construct the generation prompt for an LLM-backed strategy."""
    vocab = vocab or default_vocabulary()
    if strategy == "M":
        raise NotegenError("strategy M fills templates directly and takes no prompt")
    if strategy not in STRATEGIES:
        raise NotegenError(f"unknown strategy {strategy!r}")
    if strategy == "P3":
        if record is not None:
            raise NotegenError("strategy P3 is metadata-free; no record may be passed")
        lines = [
            "Independently describe the skin lesion in the image and classify it.",
            "candidate classes: " + ", ".join(LABEL_NAMES[c] for c in LABEL_CODES),
        ]
        lines += [
            f"{attr} options: " + ", ".join(vocab.options(attr))
            for attr in vocab.attributes
        ]
        lines.append("For each attribute choose exactly one of the predefined options.")
        return "\n".join(lines)
    if record is None:
        raise NotegenError(f"strategy {strategy} conditions on metadata; record required")
    note = render_template(record, ack_malignant).text
    if strategy == "M_P1":
        lines = [
            f'Structured note: "{note}"',
            "Expand this note into a short clinical description of the lesion.",
            "For each attribute choose exactly one of the predefined options.",
        ]
        lines += [
            f"{attr} options: " + ", ".join(vocab.options(attr))
            for attr in vocab.attributes
        ]
        return "\n".join(lines)
    # M_P2: grounded in the attribute names, no enumerated options.
    lines = [
        f'Structured note: "{note}"',
        "Expand this note into a short clinical description of the lesion,",
        "grounded in its characteristics: "
        + ", ".join(vocab.attributes)
        + ". Use your own words.",
    ]
    return "\n".join(lines)


class NoteBackend(Protocol):
    backend_id: str

    def generate(self, prompt: str, seed: int) -> str: ...


_TEMPLATE_RE = re.compile(
    r"The image includes a (benign|malignant) skin lesion, specifically a "
    r"([a-z\- ]+?)(?: \(specifically a ([^)]+)\))?(?:[\".\n]|$)"
)
_CANDIDATES_RE = re.compile(r"candidate classes: ([^\n]+)")


class MockNoteBackend:
    """Seeded grammar-based note sampler standing in for a real LLM.

    Only the prompt text is visible, as for a real model. When the prompt
    embeds a structured note the asserted class is read from it and corrupted
    with probability `corruption_rate` (uniform over all classes, so the
    asserted class stays correct with probability 1/k). Metadata-free prompts
    force a uniform class guess regardless of the rate.
    """

    def __init__(
        self,
        corruption_rate: float = 0.0,
        vocab: Optional[AttributeVocabulary] = None,
        preferred_prob: float = 0.7,
    ):
        if not 0.0 <= corruption_rate <= 1.0:
            raise NotegenError(f"corruption_rate must be in [0, 1], got {corruption_rate}")
        self.corruption_rate = corruption_rate
        self.vocab = vocab or default_vocabulary()
        self.preferred_prob = preferred_prob
        self.backend_id = "mock"

    def generate(self, prompt: str, seed: int) -> str:
        rng = np.random.default_rng(seed)
        match = _TEMPLATE_RE.search(prompt)
        if match is not None:
            mal_word, class_name, subclass = match.group(1), match.group(2).strip(), match.group(3)
            code = _NAME_TO_CODE.get(class_name)
            if code is None:
                raise NotegenError(f"mock backend cannot parse class name {class_name!r}")
            if rng.random() < self.corruption_rate:
                code = LABEL_CODES[rng.integers(len(LABEL_CODES))]
                mal_word = malignancy(code)
                subclass = None
        else:
            cand = _CANDIDATES_RE.search(prompt)
            names = (
                [n.strip() for n in cand.group(1).split(",")] if cand else list(LABEL_NAMES.values())
            )
            code = _NAME_TO_CODE[names[rng.integers(len(names))]]
            mal_word = malignancy(code)
            subclass = None

        sentences = [
            f"The image includes a {mal_word} skin lesion, specifically a {LABEL_NAMES[code]}"
            + (f" (specifically a {subclass})" if subclass else "")
            + "."
        ]
        profile = _CLASS_PROFILE[code]
        for attr in self.vocab.attributes:
            options = self.vocab.options(attr)
            if rng.random() < self.preferred_prob:
                value = options[profile[attr] % len(options)]
            else:
                value = options[rng.integers(len(options))]
            sentences.append(f"The {attr} {_ATTR_VERB[attr]} {value}.")
        if "Use your own words" in prompt:
            # P2-style freedom: one extra descriptive clause.
            extras = ("slightly raised", "flat against the skin", "mildly scaly", "smooth surfaced")
            sentences.append(f"Overall the lesion appears {extras[rng.integers(len(extras))]}.")
        return " ".join(sentences)


class RemoteNoteBackend:
    """POSTs {prompt, max_tokens, seed} to a single endpoint returning {text}.

    `client` is injectable (e.g. httpx.Client(transport=MockTransport(...)))
    so the retry behavior is testable without a network.
    """

    def __init__(
        self,
        endpoint: str,
        max_tokens: int = 256,
        timeout: float = 30.0,
        retries: int = 2,
        client=None,
    ):
        import httpx

        self.endpoint = endpoint
        self.max_tokens = max_tokens
        self.retries = retries
        self.backend_id = f"remote:{endpoint}"
        self._client = client if client is not None else httpx.Client(timeout=timeout)

    def generate(self, prompt: str, seed: int) -> str:
        last_exc: Optional[Exception] = None
        for _ in range(self.retries + 1):
            try:
                resp = self._client.post(
                    self.endpoint,
                    json={"prompt": prompt, "max_tokens": self.max_tokens, "seed": seed},
                )
                resp.raise_for_status()
                return str(resp.json()["text"])
            except Exception as exc:  # noqa: BLE001 - propagate last failure below
                last_exc = exc
        raise NotegenError(f"remote backend failed after {self.retries + 1} attempts: {last_exc}")


def synthesize(
    corpus: Corpus,
    strategy: str,
    backend: Optional[NoteBackend] = None,
    seed: int = 0,
    vocab: Optional[AttributeVocabulary] = None,
    ack_malignant: bool = True,
    retries: int = 1,
) -> tuple[list[ClinicalNote], list[SynthesisFailure]]:
    """Synthesize one note per record; failed records become failure entries.

    Outputs are ordered by record id so concurrency in callers never changes
    the artifact. Deterministic for strategy M and for the mock backend under
    a fixed seed (per-record seeds are derived from the record id).
    """
    if strategy not in STRATEGIES:
        raise NotegenError(f"unknown strategy {strategy!r}")
    vocab = vocab or default_vocabulary()
    records = sorted(corpus.records, key=lambda r: r.id)
    notes: list[ClinicalNote] = []
    failures: list[SynthesisFailure] = []
    if strategy == "M":
        for rec in records:
            notes.append(render_template(rec, ack_malignant))
        return notes, failures
    if backend is None:
        raise NotegenError(f"strategy {strategy} requires a generation backend")
    shared_prompt = build_prompt(None, "P3", vocab) if strategy == "P3" else None
    for rec in records:
        prompt = shared_prompt if shared_prompt is not None else build_prompt(
            rec, strategy, vocab, ack_malignant
        )
        rec_seed = derive_seed(seed, strategy, rec.id)
        text = None
        last_error = ""
        for _ in range(retries + 1):
            try:
                text = backend.generate(prompt, seed=rec_seed)
                break
            except Exception as exc:  # noqa: BLE001 - recorded per record
                last_error = str(exc)
        if text is None:
            failures.append(SynthesisFailure(sample_id=rec.id, error=last_error))
            continue
        notes.append(
            ClinicalNote(
                sample_id=rec.id,
                text=text,
                strategy=strategy,
                prompt=prompt,
                backend_id=backend.backend_id,
            )
        )
    return notes, failures


_MAL_ASSERT_RE = re.compile(r"\b(benign|malignant) skin lesion\b")
_CLASS_ASSERT_RE = re.compile(r"specifically a ([a-z\- ]+?)(?:[.,;()\n]|$| \()")


def audit(
    note: ClinicalNote,
    record: SampleRecord,
    vocab: Optional[AttributeVocabulary] = None,
    ack_malignant: bool = True,
) -> NoteAudit:
    """Count vocabulary violations and metadata contradictions in one note."""
    vocab = vocab or default_vocabulary()
    text = note.text.lower()

    contradictions = 0
    mal = _MAL_ASSERT_RE.search(text)
    if mal and mal.group(1) != malignancy(record.label, ack_malignant):
        contradictions += 1
    asserted_code = None
    class_match = _CLASS_ASSERT_RE.search(text)
    if class_match:
        asserted_code = _NAME_TO_CODE.get(class_match.group(1).strip())
    if asserted_code is None:
        # Fall back to a bare class-name mention anywhere in the note.
        for name, code in _NAME_TO_CODE.items():
            if name in text:
                asserted_code = code
                break
    if asserted_code is not None and asserted_code != record.label:
        contradictions += 1

    violations = 0
    for attr in vocab.attributes:
        pattern = re.compile(
            rf"\bthe {re.escape(attr)} {_ATTR_VERB[attr]}s? ([^.\n]+?)\."
        )
        for match in pattern.finditer(text):
            value = match.group(1).strip()
            if value not in vocab.options(attr):
                violations += 1

    return NoteAudit(
        vocabulary_violations=violations,
        metadata_contradictions=contradictions,
        token_length=len(note.text.split()),
    )


def save_notes(notes: list[ClinicalNote], path: str | Path) -> None:
    """Write notes as line-delimited records, ordered by sample id."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for note in sorted(notes, key=lambda n: n.sample_id):
            obj = {
                "sample_id": note.sample_id,
                "strategy": note.strategy,
                "text": note.text,
                "backend_id": note.backend_id,
                "prompt_hash": note.prompt_hash,
            }
            fh.write(json.dumps(obj, separators=(",", ":"), ensure_ascii=False) + "\n")


def load_notes(path: str | Path) -> list[ClinicalNote]:
    notes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise NotegenError(f"{path}: line {lineno}: not valid JSON") from exc
            notes.append(
                ClinicalNote(
                    sample_id=obj["sample_id"],
                    text=obj["text"],
                    strategy=obj["strategy"],
                    prompt="",
                    backend_id=obj["backend_id"],
                    prompt_hash=obj.get("prompt_hash", ""),
                )
            )
    return notes


def notes_by_id(notes: list[ClinicalNote]) -> dict[str, ClinicalNote]:
    return {note.sample_id: note for note in notes}
