"""A small benchmark configuration that runs in a few seconds."""

SMALL = {
    "data": {"synthetic": {"n_channels": 3, "length": 1500, "seed": 0}},
    "seq_len": 48,
    "pred_len": 24,
    "stride": 2,
    "train": {"epochs": 3, "lr": 0.005, "patience": 3},
    "ssr": {"epochs": 5, "lr": 0.005},
}


def small(**overrides):
    doc = {k: (dict(v) if isinstance(v, dict) else v) for k, v in SMALL.items()}
    doc.update(overrides)
    return doc
