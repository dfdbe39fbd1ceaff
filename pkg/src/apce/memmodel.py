"""Analytical memory model for dense vs chunk-selected attention.

Per-layer byte counts for three quantities, all in FP16 elements unless
configured otherwise:

- KV cache:        elements = L * 2 * d_kv
- prefill attention: elements = 2*L*d_kv + 2*L*d_q + L^2
- decode attention:  elements = 2*L*d_kv + L + 2*d_q
  (the lone L term is the attention vector for the single live query)

Dense rows use the full sequence length; selected rows use L = k*m. MB here
always means 2^20 bytes; that is the convention under which the shipped
reference figures reproduce exactly.

The builtin presets model one self-attention layer with d_q=3072 and
d_kv=1024 at three context-length groups. Reference figures for those
presets are included for cross-checking; two of the dense prefill figures
are internally inconsistent with the formula above (the formula gives
1085.67 and 2175.49 MB where 1060.0 and 2120.0 are reported) and get
flagged rather than matched.
"""

from __future__ import annotations

from dataclasses import dataclass

MIB = float(2**20)
FP16_BYTES = 2

LLAMA_3B_D_Q = 3072
LLAMA_3B_D_KV = 1024


@dataclass(frozen=True)
class MemConfig:
    """Inputs for one table row."""

    seq_len: int
    n_chunks_selected: int
    chunk_size: int
    d_q: int = LLAMA_3B_D_Q
    d_kv: int = LLAMA_3B_D_KV
    bytes_per_element: int = FP16_BYTES

    def __post_init__(self) -> None:
        for name in ("seq_len", "n_chunks_selected", "chunk_size", "d_q", "d_kv", "bytes_per_element"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.selected_len > self.seq_len:
            raise ValueError("k*m must not exceed seq_len")

    @property
    def selected_len(self) -> int:
        return self.n_chunks_selected * self.chunk_size


def kv_cache_bytes(l_effective: int, cfg: MemConfig) -> int:
    """KV cache bytes for an effective context of l_effective tokens."""
    if l_effective < 0:
        raise ValueError("l_effective must be >= 0")
    return l_effective * 2 * cfg.d_kv * cfg.bytes_per_element


def prefill_attn_bytes(l_effective: int, cfg: MemConfig) -> int:
    """Prefill attention bytes: Q/K/V vectors, the L^2 score matrix, outputs."""
    if l_effective < 1:
        raise ValueError("l_effective must be >= 1")
    elements = 2 * l_effective * cfg.d_kv + 2 * l_effective * cfg.d_q + l_effective**2
    return elements * cfg.bytes_per_element


def decode_attn_bytes(l_effective: int, cfg: MemConfig) -> int:
    """Decode attention bytes: cached K/V, the attention vector, one query/output."""
    if l_effective < 1:
        raise ValueError("l_effective must be >= 1")
    elements = 2 * l_effective * cfg.d_kv + l_effective + 2 * cfg.d_q
    return elements * cfg.bytes_per_element


def to_mib(n_bytes: int) -> float:
    """Bytes to MB (2^20 convention), rounded to two decimals."""
    return round(n_bytes / MIB, 2)


def invert_kv_cache_bytes(n_bytes: float, cfg: MemConfig) -> float:
    """Sequence length implied by a KV cache byte count (exact inverse)."""
    return n_bytes / (2 * cfg.d_kv * cfg.bytes_per_element)


COLUMNS = ("kv_cache_mb", "prefill_attn_mb", "decode_attn_mb")

# Dense sequence lengths for the builtin groups, recovered by inverting the
# KV formula from the reported dense KV figures (32.40 / 78.56 / 116.89 MB).
PRESET_DENSE_LENGTHS = {"8k": 8294, "20k": 20111, "30k": 29924}
PRESET_SELECTED_CHUNKS = {"8k": 7, "20k": 18, "30k": 24}
PRESET_CHUNK_SIZE = 800

# Reported per-layer figures used for cross-checking, in MB (2^20 bytes).
REFERENCE_MB = {
    ("8k", "dense"): {"kv_cache_mb": 32.40, "prefill_attn_mb": 260.80, "decode_attn_mb": 32.43},
    ("8k", "selected"): {"kv_cache_mb": 21.88, "prefill_attn_mb": 147.31, "decode_attn_mb": 21.90},
    ("20k", "dense"): {"kv_cache_mb": 78.56, "prefill_attn_mb": 1060.0, "decode_attn_mb": 78.61},
    ("20k", "selected"): {"kv_cache_mb": 56.25, "prefill_attn_mb": 620.51, "decode_attn_mb": 56.29},
    ("30k", "dense"): {"kv_cache_mb": 116.89, "prefill_attn_mb": 2120.0, "decode_attn_mb": 116.96},
    ("30k", "selected"): {"kv_cache_mb": 75.00, "prefill_attn_mb": 1003.12, "decode_attn_mb": 75.05},
}

# The two reference cells that disagree with the formula itself.
KNOWN_INCONSISTENT = {("20k", "dense", "prefill_attn_mb"), ("30k", "dense", "prefill_attn_mb")}


@dataclass(frozen=True)
class MemoryRow:
    label: str
    method: str  # "dense" or "selected"
    l_effective: int
    kv_cache_bytes: int
    prefill_attn_bytes: int
    decode_attn_bytes: int
    reference_mb: dict[str, float] | None = None

    @property
    def kv_cache_mb(self) -> float:
        return to_mib(self.kv_cache_bytes)

    @property
    def prefill_attn_mb(self) -> float:
        return to_mib(self.prefill_attn_bytes)

    @property
    def decode_attn_mb(self) -> float:
        return to_mib(self.decode_attn_bytes)

    def mb(self, column: str) -> float:
        return {c: getattr(self, c) for c in COLUMNS}[column]

    def mismatched_columns(self) -> list[str]:
        """Columns where the formula disagrees with the reference figure."""
        if self.reference_mb is None:
            return []
        return [c for c in COLUMNS if abs(self.mb(c) - self.reference_mb[c]) > 0.005]


@dataclass(frozen=True)
class MemoryReport:
    rows: tuple[MemoryRow, ...]
    layer_count: int = 1

    def savings(self, label: str) -> dict[str, float]:
        """Per-column savings of the selected row vs the dense row, from the
        rounded MB cells, as a fraction."""
        dense = self._find(label, "dense")
        sel = self._find(label, "selected")
        return {c: round(1.0 - sel.mb(c) / dense.mb(c), 3) for c in COLUMNS}

    def flagged_cells(self) -> list[tuple[str, str, str]]:
        out = []
        for row in self.rows:
            for col in row.mismatched_columns():
                out.append((row.label, row.method, col))
        return out

    def _find(self, label: str, method: str) -> MemoryRow:
        for row in self.rows:
            if row.label == label and row.method == method:
                return row
        raise KeyError((label, method))

    def labels(self) -> list[str]:
        seen: list[str] = []
        for row in self.rows:
            if row.label not in seen:
                seen.append(row.label)
        return seen


def make_row(
    label: str,
    method: str,
    cfg: MemConfig,
    reference_mb: dict[str, float] | None = None,
    layer_count: int = 1,
) -> MemoryRow:
    l_eff = cfg.seq_len if method == "dense" else cfg.selected_len
    return MemoryRow(
        label=label,
        method=method,
        l_effective=l_eff,
        kv_cache_bytes=kv_cache_bytes(l_eff, cfg) * layer_count,
        prefill_attn_bytes=prefill_attn_bytes(l_eff, cfg) * layer_count,
        decode_attn_bytes=decode_attn_bytes(l_eff, cfg) * layer_count,
        reference_mb=reference_mb,
    )


def builtin_configs() -> dict[str, MemConfig]:
    return {
        label: MemConfig(
            seq_len=PRESET_DENSE_LENGTHS[label],
            n_chunks_selected=PRESET_SELECTED_CHUNKS[label],
            chunk_size=PRESET_CHUNK_SIZE,
        )
        for label in ("8k", "20k", "30k")
    }


def memory_report(
    configs: dict[str, MemConfig] | None = None,
    with_reference: bool = True,
    layer_count: int = 1,
) -> MemoryReport:
    """Build the per-layer memory table.

    With the builtin configs and with_reference=True, every formula cell is
    paired with its reported reference figure; disagreeing cells show up in
    ``flagged_cells()``. Custom configs carry no reference column.
    """
    if layer_count < 1:
        raise ValueError("layer_count must be >= 1")
    custom = configs is not None
    if configs is None:
        configs = builtin_configs()
    rows: list[MemoryRow] = []
    for label, cfg in configs.items():
        for method in ("dense", "selected"):
            ref = None
            if with_reference and not custom:
                ref = REFERENCE_MB.get((label, method))
            rows.append(make_row(label, method, cfg, reference_mb=ref, layer_count=layer_count))
    return MemoryReport(rows=tuple(rows), layer_count=layer_count)


def report_text(report: MemoryReport, flag_inconsistent: bool = False) -> str:
    """Aligned text rendering, one dense/selected pair per group plus savings."""
    header = f"{'group':<8}{'method':<10}{'KV-cache (MB)':>15}{'Prefill Attn (MB)':>19}{'Decode Attn (MB)':>18}"
    lines = [header, "-" * len(header)]
    for row in report.rows:
        cells = []
        for col in COLUMNS:
            text = f"{row.mb(col):.2f}"
            if flag_inconsistent and col in row.mismatched_columns():
                text += "*"
            cells.append(text)
        lines.append(
            f"{row.label:<8}{row.method:<10}{cells[0]:>15}{cells[1]:>19}{cells[2]:>18}"
        )
    lines.append("")
    for label in report.labels():
        try:
            sav = report.savings(label)
        except KeyError:
            continue
        lines.append(
            f"{label}: savings vs dense  kv {sav['kv_cache_mb']:.1%}  "
            f"prefill {sav['prefill_attn_mb']:.1%}  decode {sav['decode_attn_mb']:.1%}"
        )
    if flag_inconsistent:
        flagged = report.flagged_cells()
        if flagged:
            lines.append("")
            lines.append("* formula disagrees with the reported reference figure:")
            for label, method, col in flagged:
                row = report._find(label, method)
                lines.append(
                    f"  {label}/{method}/{col}: formula {row.mb(col):.2f} MB vs reported "
                    f"{row.reference_mb[col]:.2f} MB"
                )
    return "\n".join(lines)


def report_csv(report: MemoryReport) -> str:
    lines = ["group,method,l_effective,kv_cache_mb,prefill_attn_mb,decode_attn_mb"]
    for row in report.rows:
        lines.append(
            f"{row.label},{row.method},{row.l_effective},"
            f"{row.kv_cache_mb:.2f},{row.prefill_attn_mb:.2f},{row.decode_attn_mb:.2f}"
        )
    return "\n".join(lines) + "\n"


def report_json(report: MemoryReport) -> dict:
    return {
        "layer_count": report.layer_count,
        "mb_convention_bytes": int(MIB),
        "rows": [
            {
                "group": row.label,
                "method": row.method,
                "l_effective": row.l_effective,
                "kv_cache_bytes": row.kv_cache_bytes,
                "prefill_attn_bytes": row.prefill_attn_bytes,
                "decode_attn_bytes": row.decode_attn_bytes,
                "kv_cache_mb": row.kv_cache_mb,
                "prefill_attn_mb": row.prefill_attn_mb,
                "decode_attn_mb": row.decode_attn_mb,
                "reference_mb": row.reference_mb,
                "mismatched_columns": row.mismatched_columns(),
            }
            for row in report.rows
        ],
        "flagged_cells": [list(cell) for cell in report.flagged_cells()],
    }
