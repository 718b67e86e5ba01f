"""Convert a piano-roll pickle to rnnlab's dataset JSON.

The widely distributed JSB Chorales / Nottingham / Piano-midi.de / MuseData
pickles hold ``{"train": [...], "valid": [...], "test": [...]}`` where each
sequence is a list of frames and each frame lists the active MIDI pitches.
Pitches are mapped to key indices by subtracting 21 (A0); anything outside
the 88-key range is an error unless ``--clip`` is given.

Only unpickle files you trust.

    python python/convert_pickle.py JSB_Chorales.pickle jsb.json
"""

import argparse
import json
import pickle
import sys

MIDI_OFFSET = 21
NOTES = 88


def convert(raw, clip=False):
    out = {}
    dropped = 0
    for split in ("train", "valid", "test"):
        seqs = []
        for s, seq in enumerate(raw.get(split, [])):
            frames = []
            for f, frame in enumerate(seq):
                keys = set()
                for pitch in frame:
                    k = int(pitch) - MIDI_OFFSET
                    if not 0 <= k < NOTES:
                        if clip:
                            dropped += 1
                            continue
                        raise ValueError(f"{split} sequence {s}, frame {f}: MIDI pitch {pitch} outside the piano range")
                    keys.add(k)
                frames.append(sorted(keys))
            seqs.append(frames)
        out[split] = seqs
    return out, dropped


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("pickle")
    p.add_argument("output")
    p.add_argument("--clip", action="store_true", help="drop out-of-range pitches instead of failing")
    args = p.parse_args(argv)
    with open(args.pickle, "rb") as fh:
        raw = pickle.load(fh, encoding="latin1")
    data, dropped = convert(raw, clip=args.clip)
    with open(args.output, "w") as fh:
        json.dump(data, fh, separators=(",", ":"))
    counts = ", ".join(f"{k} {len(v)}" for k, v in data.items())
    print(f"wrote {args.output}: {counts} sequences" + (f"; dropped {dropped} pitches" if dropped else ""))


if __name__ == "__main__":
    sys.exit(main())
