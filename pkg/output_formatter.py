"""
Output formatting utilities for evaluation results and annotation reports.
"""
from typing import Dict, List, Optional, Sequence

from models import CLASS_NAMES, EvalResult, LocalizationStats, ObjectRecord


def format_metric(value: Optional[float]) -> str:
    """Six-decimal number, or ``n/a`` for an undefined metric."""
    return "n/a" if value is None else f"{value:.6f}"


def format_eval_table(result: EvalResult) -> str:
    """
    Format an EvalResult as a tab-separated table.

    One row per OLS threshold, then a ``mean`` row and one row per class.

    Args:
        result: Evaluation result

    Returns:
        TSV string with a header line
    """
    lines = ["threshold\tAP\tAR\tTP\tFP\tFN"]
    for threshold, ap, ar in zip(result.thresholds, result.ap_per_threshold, result.ar_per_threshold):
        tp, fp, fn = result.counts[threshold]
        lines.append(f"{threshold:.2f}\t{format_metric(ap)}\t{format_metric(ar)}\t{tp}\t{fp}\t{fn}")
    lines.append(f"mean\t{format_metric(result.ap)}\t{format_metric(result.ar)}\t\t\t")
    for class_id, (ap, ar) in sorted(result.per_class.items()):
        lines.append(f"{CLASS_NAMES[class_id]}\t{format_metric(ap)}\t{format_metric(ar)}\t\t\t")
    return "\n".join(lines)


def format_key_values(result: EvalResult) -> str:
    """
    Format an EvalResult as a machine-readable ``key=value`` block.

    Args:
        result: Evaluation result

    Returns:
        One ``key=value`` per line
    """
    lines = [f"AP={format_metric(result.ap)}", f"AR={format_metric(result.ar)}"]
    for threshold, ap, ar in zip(result.thresholds, result.ap_per_threshold, result.ar_per_threshold):
        lines.append(f"AP@{threshold:.2f}={format_metric(ap)}")
        lines.append(f"AR@{threshold:.2f}={format_metric(ar)}")
    for class_id, (ap, ar) in sorted(result.per_class.items()):
        lines.append(f"AP.{CLASS_NAMES[class_id]}={format_metric(ap)}")
        lines.append(f"AR.{CLASS_NAMES[class_id]}={format_metric(ar)}")
    return "\n".join(lines)


def format_localization_table(rows: Dict[str, Dict[int, LocalizationStats]]) -> str:
    """
    Mean localization error per class for several annotation sets.

    Args:
        rows: Label (e.g. ``camera``, ``crf``) -> per-class stats

    Returns:
        TSV string
    """
    lines = ["set\tclass\tcount\tmean_range_error\tmean_distance_error"]
    for label, stats in rows.items():
        for class_id, s in sorted(stats.items()):
            lines.append(
                f"{label}\t{CLASS_NAMES[class_id]}\t{s.count}\t"
                f"{format_metric(s.mean_range_error)}\t{format_metric(s.mean_distance_error)}"
            )
    return "\n".join(lines)


def export_to_file(text: str, filename: str, header: Optional[Dict[str, str]] = None) -> None:
    """
    Export a report to a text file.

    Args:
        text: Report body
        filename: Output file path
        header: ``# key=value`` lines written first
    """
    with open(filename, 'w', encoding='utf-8') as f:
        for key, value in (header or {}).items():
            f.write(f"# {key}={value}\n")
        f.write(text)
        f.write("\n")

    print(f"✓ Exported to {filename}")


def print_annotation_summary(annotations: Sequence[ObjectRecord], frames: int) -> None:
    """
    Print summary statistics about annotations.

    Args:
        annotations: Annotation records
        frames: Number of frames annotated
    """
    per_class: Dict[int, List[ObjectRecord]] = {c: [] for c in range(len(CLASS_NAMES))}
    for ann in annotations:
        if ann.class_id in per_class:
            per_class[ann.class_id].append(ann)
    mean_conf = (sum(a.confidence for a in annotations) / len(annotations)) if annotations else None

    print(f"\nAnnotated {frames} frames")
    print(f"Total annotations: {len(annotations)}")
    print(f"Mean fused confidence: {format_metric(mean_conf)}")
    for class_id, anns in per_class.items():
        print(f"  - {CLASS_NAMES[class_id]}: {len(anns)}")


def print_eval_summary(result: EvalResult) -> None:
    """
    Print the headline AP/AR numbers.

    Args:
        result: Evaluation result
    """
    first = result.thresholds[0] if result.thresholds else None
    print(f"\nAP (mean over OLS thresholds): {format_metric(result.ap)}")
    print(f"AR (mean over OLS thresholds): {format_metric(result.ar)}")
    if first is not None:
        print(f"AP@{first:.2f}: {format_metric(result.ap_per_threshold[0])}")
        print(f"AR@{first:.2f}: {format_metric(result.ar_per_threshold[0])}")
