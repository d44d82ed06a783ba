#!/usr/bin/env python3
"""Regenerate the packaged wordpiece vocabulary fixture.

The fixture is deterministic: specials, characters, continuation pieces, the
closed domain vocabulary used by the note grammar, a block of common English
words, then reserved [unusedN] slots padding the total to 30,522 entries
(the canonical uncased BERT vocabulary size).
"""

from pathlib import Path
import string

SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]

PUNCT = list("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~")
CHARS = list(string.digits) + list(string.ascii_lowercase)

SUFFIX_PIECES = [
    "##s", "##es", "##ed", "##ing", "##ly", "##er", "##est", "##ion", "##tion",
    "##al", "##ic", "##ous", "##ness", "##ment", "##able", "##ive", "##ity",
    "##ful", "##less", "##en", "##an", "##ar", "##or", "##ism", "##ist",
]

DOMAIN_WORDS = [
    # template and taxonomy
    "the", "image", "includes", "a", "benign", "malignant", "skin", "lesion",
    "specifically", "keratosis", "nevus", "actinic", "basal", "cell", "cancer",
    "melanoma", "melanocytic", "bowen", "disease", "seborrheic", "compound",
    "dysplastic", "nodular", "superficial", "spreading",
    # attribute grammar
    "symmetry", "symmetric", "asymmetric", "partially", "border", "well",
    "defined", "ill", "irregular", "regular", "color", "tan", "brown", "dark",
    "black", "blue", "gray", "red", "pink", "white", "dermoscopic",
    "structures", "include", "pigment", "network", "dots", "globules",
    "streaks", "veil", "structureless", "areas", "type", "macule", "papule",
    "nodule", "plaque", "patch", "is", "are",
    # mock free-form clause
    "overall", "appears", "slightly", "raised", "flat", "against", "mildly",
    "scaly", "smooth", "surfaced",
    # clinical flavor
    "patient", "presents", "with", "on", "of", "and", "or", "in", "at", "to",
    "shows", "showing", "surface", "pigmented", "pigmentation", "margin",
    "margins", "diameter", "millimeter", "clinical", "dermoscopy", "biopsy",
    "diagnosis", "diagnostic", "history", "examination", "noted", "observed",
    "visible", "present", "absent", "mild", "moderate", "severe", "small",
    "large", "round", "oval", "elevated", "flat", "rough", "shiny", "dull",
    "uniform", "variegated", "erythema", "scale", "crust", "ulceration",
    "telangiectasia", "keratin", "follicular", "vascular", "pattern",
    "patterns", "region", "central", "peripheral", "edge", "edges", "texture",
]

COMMON_WORDS = """
about above after again all almost along already also although always among
an any anything appear application approach area around as available average
away back based be because become been before being below best better between
beyond both but by call can cannot case cases certain change changes clear
clearly close combined come common compared comparison complete condition
conditions consider considered contains could current data day days defined
degree depend described description detail details determine developed
development did different difficult direct direction discussed does done down
due during each early easily effect effects eight either end enough entire
especially estimate even every evidence exact example examples except expect
experience fact factor factors far few field figure final finally find finding
findings first five follow following for form found four free frequently from
full function further general generally give given good great group groups had
half hand has have having he her here high higher highest him his how however
human hundred idea identified if important improve improved include included
including increase increased indicate information instead interest into it its
itself just keep kind know known last later least left less let level levels
like likely limited line list little local long longer look low lower made
main major make makes making many material may mean means measure measured
measurement method methods might million more most mostly much must near
nearly necessary need needed never new next nine no non normal not note noted
now number observed obtain obtained occur occurs of off often old once one
only open or order other others our out over overall own part particular
particularly parts past per percent performance performed perhaps period
place point points possible potential power presented previous previously
primary probably problem problems procedure process produced provide provided
provides purpose put question quite range rate rather reached read real really
reason recent recently reduce reduced reference regard region related relative
relatively report reported require required result resulted resulting results
review right same sample samples say second section see seem seen selected
series set seven several shall short should show shown shows side significant
significantly similar simple simply since single six size so some something
sometimes source sources specific standard start state statement states still
study studies subject subjects such suggest suggested support system systems
table take taken term terms test tested testing tests than that their them
then there therefore these they thing think third this those though three
through thus time times today together too total toward two typical typically
under understand unit until up upon us use used useful using usually value
values various very via view was way ways we week well were what when where
whether which while who whole whose why wide widely will within without word
words work would year years yet you your zero
""".split()

TARGET_SIZE = 30522


def main() -> None:
    entries: list[str] = []
    seen: set[str] = set()

    def add(token: str) -> None:
        if token not in seen:
            entries.append(token)
            seen.add(token)

    for tok in SPECIALS + PUNCT + CHARS:
        add(tok)
    for ch in CHARS:
        add("##" + ch)
    for tok in SUFFIX_PIECES:
        add(tok)
    for tok in sorted(set(DOMAIN_WORDS)):
        add(tok)
    for tok in sorted(set(COMMON_WORDS)):
        add(tok)

    n_unused = TARGET_SIZE - len(entries)
    assert n_unused > 0, f"base vocabulary already exceeds {TARGET_SIZE}"
    for i in range(n_unused):
        add(f"[unused{i}]")
    assert len(entries) == TARGET_SIZE

    out = Path(__file__).resolve().parents[1] / "src" / "dermalign" / "data" / "vocab.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(entries) + "\n", encoding="utf-8")
    print(f"wrote {len(entries)} entries to {out}")


if __name__ == "__main__":
    main()
