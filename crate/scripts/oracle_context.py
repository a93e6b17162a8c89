"""Independent encoder for the four context layouts; writes golden files.

Usage: python3 scripts/oracle_context.py crates/core/tests/golden
"""
import json
import sys
import unicodedata
from pathlib import Path

FIXTURE = [
    ("A", "Hi there!"),
    ("B", "Hello, Ann."),
    ("A", "How's it going?"),
    ("C", "Fine, thanks"),
    ("B", "ok then"),
    ("A", "bye"),
]
RESPONDER = "A"
MAX_TURNS = 4
TIGHT_BUDGET = 9
TINY_BUDGET = 2


def split_words(text):
    out, run = [], ""
    for ch in text:
        if ch.isalnum():
            run += ch
            continue
        if run:
            out.append(run)
            run = ""
        if not ch.isspace():
            out.append(ch)
    if run:
        out.append(run)
    return out


def vocabulary():
    content = set()
    for spk, text in FIXTURE:
        content.update(split_words(unicodedata.normalize("NFC", text)))
        content.update(split_words(spk))
    tokens = ["<unk>", "<eos>"] + sorted(content)
    speakers = sorted({s for s, _ in FIXTURE})
    spk_ids = {s: len(tokens) + i for i, s in enumerate(speakers)}
    tokens += [f"<spk_{s}>" for s in speakers]
    return tokens, spk_ids


def encode(text, index):
    return [index.get(w, 0) for w in split_words(text)]


def build(fmt, history, budget, index, spk_ids):
    eos = 1
    window = history[-MAX_TURNS:]
    prefix = encode(RESPONDER, index) if fmt == "leading-speaker" else []
    segs = []
    for spk, text in window:
        if fmt == "per-utterance-speaker":
            marker = encode(spk, index)
        elif fmt == "speaker-token-types":
            marker = [spk_ids[spk]]
        else:
            marker = []
        segs.append({"marker": marker, "content": encode(text, index), "spk": spk})

    def seg_len(s):
        return len(s["marker"]) + len(s["content"]) + 1

    total = len(prefix) + sum(seg_len(s) for s in segs)
    while total > budget and len(segs) > 1:
        total -= seg_len(segs.pop(0))
    if total > budget:
        excess = total - budget
        for part in ("content", "marker"):
            cut = min(excess, len(segs[0][part]))
            segs[0][part] = segs[0][part][cut:]
            excess -= cut
        cut = min(excess, len(prefix))
        prefix = prefix[cut:]
        excess -= cut
        assert excess == 0

    ids, types, bounds = list(prefix), [], []
    for s in segs:
        bounds.append(len(ids))
        piece = s["marker"] + s["content"] + [eos]
        ids += piece
        if fmt == "speaker-token-types":
            types += [spk_ids[s["spk"]]] * len(piece)
    return {
        "token_ids": ids,
        "token_type_ids": types,
        "turn_boundaries": bounds,
        "responder": RESPONDER,
    }


def main():
    out = Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    tokens, spk_ids = vocabulary()
    index = {t: i for i, t in enumerate(tokens) if not t.startswith("<spk_")}
    (out / "vocab.txt").write_text("".join(t + "\n" for t in tokens))
    history = FIXTURE[:-1]
    for fmt in ("plain", "leading-speaker", "per-utterance-speaker", "speaker-token-types"):
        for name, budget in (("full", 1024), ("tight", TIGHT_BUDGET), ("tiny", TINY_BUDGET)):
            enc = build(fmt, history, budget, index, spk_ids)
            (out / f"{fmt}.{name}.json").write_text(json.dumps(enc) + "\n")


if __name__ == "__main__":
    main()
