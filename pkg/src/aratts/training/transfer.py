"""Initialise a model from a checkpoint trained with another symbol table."""
from dataclasses import dataclass, field

from aratts.autodiff.rng import make_rng

EMBEDDING = "encoder.embedding.weight"
NEW_ROW_STD = 0.02


class ShapeConflict(ValueError):
    pass


@dataclass
class RemapReport:
    copied_rows: list = field(default_factory=list)  # symbols copied from the checkpoint
    initialized_rows: list = field(default_factory=list)  # symbols drawn fresh
    copied_tensors: list = field(default_factory=list)

    def summary(self):
        return (f"{len(self.copied_tensors)} tensors copied; embedding rows: "
                f"{len(self.copied_rows)} copied, {len(self.initialized_rows)} initialized")


def transfer_init(model, checkpoint, symbol_map, seed=0, embedding=EMBEDDING):
    """Copy every tensor of ``checkpoint`` into ``model``.

    ``symbol_map`` is the model's symbol list (row i of the embedding is
    symbol_map[i]); the checkpoint's list comes from its ``symbols``
    metadata. Rows for symbols in both tables are copied by symbol string,
    others are drawn from N(0, 0.02^2). Any other shape or name mismatch
    raises :class:`ShapeConflict` before the model is touched.
    """
    state = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    targets = {name: p.data for name, p in state.items()}
    targets.update(buffers)
    src = checkpoint.tensors

    missing = sorted(set(targets) - set(src))
    extra = sorted(set(src) - set(targets))
    if missing or extra:
        raise ShapeConflict(f"tensor names differ: missing={missing} unexpected={extra}")
    for name, arr in targets.items():
        if name != embedding and src[name].shape != arr.shape:
            raise ShapeConflict(f"{name}: checkpoint {src[name].shape} vs model {arr.shape}")

    symbol_map = list(symbol_map)
    src_symbols = list(checkpoint.metadata.get("symbols") or symbol_map)
    emb_src = src[embedding]
    emb_dst = targets[embedding]
    if emb_src.shape[1:] != emb_dst.shape[1:]:
        raise ShapeConflict(f"{embedding}: width {emb_src.shape[1:]} vs {emb_dst.shape[1:]}")
    if len(src_symbols) != emb_src.shape[0] or len(symbol_map) != emb_dst.shape[0]:
        raise ShapeConflict("symbol tables do not match the embedding row counts")

    report = RemapReport()
    for name, arr in targets.items():
        if name != embedding:
            arr[...] = src[name]
            report.copied_tensors.append(name)

    src_row = {s: i for i, s in enumerate(src_symbols)}
    rng = make_rng(seed)
    fresh = [s for s in symbol_map if s not in src_row]
    draws = iter(rng.normal(0.0, NEW_ROW_STD, size=(len(fresh), emb_dst.shape[1])))
    for i, s in enumerate(symbol_map):
        if s in src_row:
            emb_dst[i] = emb_src[src_row[s]]
            report.copied_rows.append(s)
        else:
            emb_dst[i] = next(draws)
            report.initialized_rows.append(s)
    report.copied_tensors.append(embedding)
    return report

