"""Synthetic stand-in for the UCI student-outcome CSV.

Generates a file with the same headers (including the raw quirks the
loader must repair), the same delimiter, schema-conforming category
codes, and the same class proportions as the real export. Rows carry
two kinds of structure: six latent blobs (visible to clustering; two of
them share a signature so cluster identity alone cannot separate every
class) and a per-student quality score that drives grades, approvals,
and a few boolean skews. Intended for offline smoke tests and demos,
not as a substitute for the real dataset.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .ingest import CLASS_NAMES, load_schema

RAW_HEADER = [
    "Marital status", "Application mode", "Application order", "Course",
    "Daytime/evening attendance\t", "Previous qualification",
    "Previous qualification (grade)", "Nacionality", "Mother's qualification",
    "Father's qualification", "Mother's occupation", "Father's occupation",
    "Admission grade", "Displaced", "Educational special needs", "Debtor",
    "Tuition fees up to date", "Gender", "Scholarship holder",
    "Age at enrollment", "International",
    "Curricular units 1st sem (credited)", "Curricular units 1st sem (enrolled)",
    "Curricular units 1st sem (evaluations)", "Curricular units 1st sem (approved)",
    "Curricular units 1st sem (grade)", "Curricular units 1st sem (without evaluations)",
    "Curricular units 2nd sem (credited)", "Curricular units 2nd sem (enrolled)",
    "Curricular units 2nd sem (evaluations)", "Curricular units 2nd sem (approved)",
    "Curricular units 2nd sem (grade)", "Curricular units 2nd sem (without evaluations)",
    "Unemployment rate", "Inflation rate", "GDP", "Target",
]

REFERENCE_COUNTS = {"Dropout": 1421, "Enrolled": 794, "Graduate": 2209}

CURRICULAR = [
    "Curricular units 1st sem (credited)", "Curricular units 1st sem (enrolled)",
    "Curricular units 1st sem (evaluations)", "Curricular units 1st sem (approved)",
    "Curricular units 1st sem (without evaluations)",
    "Curricular units 2nd sem (credited)", "Curricular units 2nd sem (enrolled)",
    "Curricular units 2nd sem (evaluations)", "Curricular units 2nd sem (approved)",
    "Curricular units 2nd sem (without evaluations)",
]


def scaled_class_counts(n_rows: int) -> dict[str, int]:
    ref_total = sum(REFERENCE_COUNTS.values())
    names = list(CLASS_NAMES)
    quotas = np.array([REFERENCE_COUNTS[c] * n_rows / ref_total for c in names])
    floors = np.floor(quotas).astype(int)
    order = np.argsort(-(quotas - floors), kind="stable")
    for i in range(n_rows - floors.sum()):
        floors[order[i % len(names)]] += 1
    counts = dict(zip(names, floors))
    if min(counts.values()) < 3:
        raise ValueError(f"n_rows={n_rows} leaves a class below 3 members")
    return counts


def _zipf_weights(n: int) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1)
    return w / w.sum()


def generate_csv(path, n_rows: int = 4424, seed: int = 12345) -> Path:
    """Write the synthetic CSV; deterministic given (n_rows, seed)."""
    rng = np.random.default_rng(seed)
    schema = load_schema()
    cats = {name: col["categories"] for name, col in schema["columns"].items()
            if col["kind"] == "categorical"}

    counts = scaled_class_counts(n_rows)
    labels = np.concatenate([
        np.full(counts[name], code)
        for code, name in enumerate(CLASS_NAMES)
    ])
    rng.shuffle(labels)

    # blobs 0,1 -> Dropout; 2,3 -> Enrolled; 4,5 -> Graduate. Blobs 1 and 2
    # intentionally share a signature so class overlap survives clustering.
    blob = 2 * labels + rng.integers(0, 2, size=n_rows)
    sig_rng = np.random.default_rng(977)
    signatures = sig_rng.integers(0, 2, size=(6, len(CURRICULAR))).astype(float)
    signatures[2] = signatures[1]
    quality = np.array([-1.0, 0.0, 1.0])[labels] \
        + np.where(blob % 2 == 1, 0.25, -0.25) + rng.normal(0.0, 0.55, n_rows)

    home_course = {b: cats["Course"][sig_rng.integers(len(cats["Course"]))] for b in range(6)}

    col_values: dict[str, list[str]] = {}

    def draw_categorical(name, weights_by_row=None):
        options = cats[name]
        if weights_by_row is None:
            w = _zipf_weights(len(options))
            picks = rng.choice(len(options), size=n_rows, p=w)
            col_values[name] = [options[i] for i in picks]

    for name in ("Marital status", "Application mode", "Previous qualification",
                 "Nationality", "Mother's qualification", "Father's qualification",
                 "Mother's occupation", "Father's occupation"):
        draw_categorical(name)

    course_options = cats["Course"]
    zipf = _zipf_weights(len(course_options))
    course = []
    for i in range(n_rows):
        if rng.random() < 0.55:
            course.append(home_course[int(blob[i])])
        else:
            course.append(course_options[rng.choice(len(course_options), p=zipf)])
    col_values["Course"] = course

    def bernoulli_by_class(p_by_class):
        p = np.array(p_by_class)[labels]
        return (rng.random(n_rows) < p).astype(int)

    col_values["Daytime attendance"] = [str(v) for v in (rng.random(n_rows) < 0.89).astype(int)]
    col_values["Gender"] = [str(v) for v in bernoulli_by_class([0.45, 0.35, 0.32])]
    col_values["International"] = [str(v) for v in (rng.random(n_rows) < 0.025).astype(int)]
    col_values["Displaced"] = [str(v) for v in (rng.random(n_rows) < 0.55).astype(int)]
    col_values["Educational special needs"] = [str(v) for v in (rng.random(n_rows) < 0.012).astype(int)]
    col_values["Debtor"] = [str(v) for v in bernoulli_by_class([0.30, 0.12, 0.05])]
    col_values["Tuition fees up to date"] = [str(v) for v in bernoulli_by_class([0.63, 0.85, 0.95])]
    col_values["Scholarship holder"] = [str(v) for v in bernoulli_by_class([0.10, 0.22, 0.35])]

    col_values["Application order"] = [str(v) for v in rng.integers(0, 10, n_rows)]
    col_values["Age at enrollment"] = [
        str(int(np.clip(18 + rng.exponential(4.0), 17, 70))) for _ in range(n_rows)
    ]
    for name, base in (("Previous qualification (grade)", 132.0), ("Admission grade", 126.0)):
        vals = np.clip(base + 12.0 * quality + rng.normal(0, 9.0, n_rows), 95.0, 190.0)
        col_values[name] = [f"{v:.1f}" for v in vals]

    weight_rng = np.random.default_rng(1311)
    for j, name in enumerate(CURRICULAR):
        base = 5.5 + 1.5 * weight_rng.random()
        relevance = weight_rng.uniform(0.5, 1.6)
        vals = base + 3.2 * signatures[blob, j] + relevance * quality \
            + rng.normal(0.0, 0.8, n_rows)
        col_values[name] = [str(int(np.clip(round(v), 0, 26))) for v in vals]
    for name in ("Curricular units 1st sem (grade)", "Curricular units 2nd sem (grade)"):
        vals = np.clip(11.0 + 2.2 * quality + rng.normal(0, 1.6, n_rows), 0.0, 18.5)
        col_values[name] = [f"{v:.2f}" for v in vals]

    macro_sets = {
        "Unemployment rate": ["7.6", "8.9", "9.4", "10.8", "11.1", "12.4", "13.9", "15.5", "16.2"],
        "Inflation rate": ["-0.8", "-0.3", "0.3", "0.5", "1.4", "2.6", "2.8", "3.7"],
        "GDP": ["-4.06", "-3.12", "-1.70", "-0.92", "0.32", "0.79", "1.74", "1.79", "2.02", "3.51"],
    }
    for name, options in macro_sets.items():
        picks = rng.integers(0, len(options), n_rows)
        col_values[name] = [options[i] for i in picks]

    col_values["Target"] = [CLASS_NAMES[c] for c in labels]

    # map repaired names back to the raw header spellings
    repaired_of_raw = {"Nacionality": "Nationality",
                       "Daytime/evening attendance\t": "Daytime attendance"}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(";".join(RAW_HEADER) + "\n")
        for i in range(n_rows):
            row = []
            for raw_name in RAW_HEADER:
                name = repaired_of_raw.get(raw_name, raw_name)
                row.append(col_values[name][i])
            fh.write(";".join(row) + "\n")
    return path
