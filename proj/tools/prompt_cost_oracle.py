#!/usr/bin/env python3
"""Independent re-implementation of reply-prompt rendering and token
accounting, used to produce tests/golden/reply_cost.json.

    python3 tools/prompt_cost_oracle.py > tests/golden/reply_cost.json
"""

import json
import pathlib
import re
import string

ROOT = pathlib.Path(__file__).resolve().parent.parent
TEMPLATES = ROOT / "resources" / "templates"

PUNCT = set(string.punctuation)
TONES = ["humorous", "kind", "dramatic", "controversial", "aggressive", "teasing", "alarmist", "worried"]
SPEECH = ["assertive", "commissive", "expressive", "directive"]
VALUES = {
    "diversity": (["nationality", "mental condition", "physical condition"],
                  ["Italian", "good mental health", "good physical health"]),
    "time": (["time of the day", "season", "events"], ["evening", "winter", "almost Easter"]),
    "place": (["environment", "city", "nation"], ["house", "Genoa", "Italy"]),
    "tone": (TONES, TONES),
    "speech_act": (SPEECH, SPEECH),
}
TITLES = {"diversity": "Diversity", "time": "Time", "place": "Place", "tone": "Tone",
          "speech_act": "Speech act"}


def tokens(text):
    out = []
    for m in re.finditer(r"\S+", text):
        word, base = m.group(), m.start()
        lead = 0
        while lead < len(word) and word[lead] in PUNCT:
            lead += 1
        if lead == len(word):
            out.append(base)
            continue
        trail = len(word)
        while trail > lead and word[trail - 1] in PUNCT:
            trail -= 1
        if lead:
            out.append(base)
        out.append(base + lead)
        if trail < len(word):
            out.append(base + trail)
    return out


def directive(kind, active):
    fields, labels = VALUES[kind]
    title = TITLES[kind]
    if active is not None:
        if kind == "tone":
            return f"{title} (compulsory): reply with a **{labels[active]}** tone."
        if kind == "speech_act":
            return f"{title} (compulsory): the sentence must be **{labels[active]}**."
        return f"{title} (compulsory, you must use it): **{fields[active]}: {labels[active]}**."
    if kind == "tone":
        return f"{title} (compulsory): keep a **neutral** tone and avoid abrupt tone changes."
    if kind == "speech_act":
        return f"{title} (optional): you may use one of these speech acts: **{', '.join(labels)}**."
    pairs = "; ".join(f"{f}: {v}" for f, v in zip(fields, labels))
    return f"{title} (optional, use it only if it fits): **{pairs}**."


def render(flags, topic):
    template = (TEMPLATES / "reply_system.txt").read_text().rstrip("\n")
    slots = {k: directive(k, flags.get(k)) for k in VALUES}
    slots["tone_detection"] = (TEMPLATES / "tone_detection.txt").read_text().rstrip("\n")
    slots["topic"] = topic
    text, ranges = "", []
    for part in re.split(r"(\{[a-z_]+\})", template):
        if not part:
            continue
        begin = len(text)
        if part.startswith("{"):
            name = part[1:-1]
            text += slots[name]
            ranges.append((name, begin, len(text)))
        else:
            text += part
            ranges.append(("instructions", begin, len(text)))
    return text, ranges


def cost(flags, topic, user):
    system, ranges = render(flags, topic)
    starts = tokens(system)
    total = len(starts) + len(tokens(user))
    per = {name: 0 for name in list(VALUES) + ["tone_detection"]}
    for s in starts:
        for name, b, e in ranges:
            if b <= s < e:
                if name in per:
                    per[name] += 1
                break
    return {
        "system": system,
        "system_tokens": len(starts),
        "total_tokens": total,
        "sections": {k: {"tokens": v, "fraction": v / total} for k, v in per.items()},
    }


USER = "I spent the whole afternoon in my garden with the roses."
CASES = {
    "all_free": {},
    "pinned": {"diversity": 0, "time": 0, "place": 1, "tone": 0, "speech_act": 0},
}

if __name__ == "__main__":
    doc = {"user_sentence": USER, "topic": "gardening",
           "cases": {name: {"flags": flags, **cost(flags, "gardening", USER)}
                     for name, flags in CASES.items()}}
    print(json.dumps(doc, indent=2, sort_keys=True))
