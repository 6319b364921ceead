"""
Loading dialogue structure records
==================================

Each record holds four utterances and a label block whose row ``i`` marks
the utterances that cause utterance ``i``. Binding attaches a per-record
embedding matrix so the records become model-ready samples.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from idcausal import datasets_io as io

record = {
    "causal_type": "Chain_III",
    "clause": {"1": "Your bill is 19.", "2": "Before I pay, I have a complaint.",
               "3": "I'm sorry to hear that.", "4": "Spilling wine on clothes is frustrating."},
    "dia_id": 1,
    "label": {"1": "0,0,0,0", "2": "1,0,0,0", "3": "0,1,0,0", "4": "0,1,1,0"},
}
rec = io.parse_record(record)
print(rec.causal_type, "structure id", rec.structure_id)
print(rec.adjacency.astype(int))

# Defects are reported with the record id.
bad = dict(record, label={**record["label"], "2": "1,1,0,0"})
try:
    io.parse_record(bad)
except io.SchemaError as exc:
    print("rejected:", exc)

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "records.jsonl"
    path.write_text(json.dumps(record) + "\n" + json.dumps(dict(record, dia_id=2)) + "\n")
    records = io.load_causalogue(path)
    bundle = io.EmbeddingBundle({r.key: np.random.default_rng(r.dia_id).normal(size=(4, 8)) for r in records})
    ds = io.bind_embeddings(records, bundle)
    print(len(ds), "samples, each", ds[0].x.shape)
