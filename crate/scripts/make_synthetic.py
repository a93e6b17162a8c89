"""Writes the seeded 200-utterance synthetic chat log used by the end-to-end test.

Replies follow a small script keyed on the previous line, with per-speaker
wording, so nearest-context retrieval has something real to find.
"""
import json
import random
import sys

SPEAKERS = ["ann", "bob", "cat"]
OPENERS = ["hi there", "good morning", "are you around", "did you see the game last night"]
SCRIPT = {
    "hi there": ["hey how are you", "hello hello"],
    "good morning": ["morning how did you sleep", "good morning to you too"],
    "are you around": ["yes what is up", "i am at the office right now"],
    "did you see the game last night": ["yes it was a great game", "no i missed it what happened"],
    "hey how are you": ["i am good thanks and you", "pretty busy with work today"],
    "hello hello": ["what are you doing today", "how was your weekend"],
    "morning how did you sleep": ["i slept really well thanks", "not great to be honest"],
    "good morning to you too": ["what are you doing today", "any plans for lunch"],
    "yes what is up": ["want to grab lunch later", "can you call me tonight"],
    "i am at the office right now": ["ok call me when you are free", "any plans for lunch"],
    "yes it was a great game": ["the last goal was amazing", "i can not believe we won"],
    "no i missed it what happened": ["we won in the last minute", "it was a great game you should watch it"],
    "i am good thanks and you": ["i am good too thanks", "pretty busy with work today"],
    "pretty busy with work today": ["do not work too hard", "want to grab lunch later"],
    "what are you doing today": ["just working from home", "going to the gym later"],
    "how was your weekend": ["it was relaxing thanks", "too short as always"],
    "i slept really well thanks": ["glad to hear that", "what are you doing today"],
    "not great to be honest": ["sorry to hear that", "maybe take a nap later"],
    "any plans for lunch": ["want to grab lunch later", "i brought lunch from home"],
    "want to grab lunch later": ["sure see you at noon", "sounds good to me"],
    "can you call me tonight": ["sure i will call you tonight", "sounds good to me"],
    "ok call me when you are free": ["will do talk soon", "sounds good to me"],
}
FALLBACK = ["ok", "sounds good to me", "talk soon", "haha yes", "see you later"]
STYLE = {"ann": "", "bob": " haha", "cat": " :)"}


def main(path, seed=20240611, total=200):
    rng = random.Random(seed)
    lines = []
    written = 0
    conv = 0
    while written < total:
        conv_id = f"conv-{conv:02d}"
        conv += 1
        a, b = rng.sample(SPEAKERS, 2)
        ts = 1_700_000_000_000 + conv * 86_400_000
        length = min(rng.randint(6, 12), total - written)
        speaker = a
        prev = None
        for i in range(length):
            if prev is None:
                base = rng.choice(OPENERS)
            else:
                base = rng.choice(SCRIPT.get(prev, FALLBACK))
            if base in FALLBACK and rng.random() < 0.3:
                base = rng.choice(OPENERS)
            prev = base
            text = base + (STYLE[speaker] if rng.random() < 0.3 else "")
            row = {"conversation_id": conv_id, "speaker_id": speaker, "text": text}
            if i == 0 or rng.random() > 0.05:
                row["timestamp"] = ts
            lines.append(json.dumps(row))
            written += 1
            ts += rng.randint(1_000, 120_000)
            # Occasional same-speaker runs give collapsing something to merge.
            if rng.random() > 0.1:
                speaker = b if speaker == a else a
        if conv % 5 == 0:
            lines.append('{"conversation_id": "broken", "speaker_id": ')
    lines.insert(37, '{"conversation_id": "x", "speaker_id": "ann", "text": 5}')
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main(sys.argv[1])
