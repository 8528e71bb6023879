"""Regenerates the CSV fixtures under this directory.

Everything here is synthetic. The 33-entity set mimics the shape of a
state-level health survey (131 indicators with mixed polarity, a handful of
incomplete columns, one entity with many gaps) so the full pipeline can be
exercised without the original survey files.

    python3 fixtures/generate_fixtures.py
"""

import csv
import pathlib

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent


def write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def fmt(v):
    return "" if v is None else f"{v:.1f}"


def write_set(name, entities, incomes, indicators, polarity, values):
    d = ROOT / name
    write_csv(
        d / "indicators.csv",
        ["entity", *indicators],
        [[e, *(fmt(v) for v in row)] for e, row in zip(entities, values)],
    )
    write_csv(d / "polarity.csv", ["indicator", "polarity"],
              [[k, "+1" if p > 0 else "-1"] for k, p in zip(indicators, polarity)])
    write_csv(d / "income.csv", ["entity", "income"],
              [[e, str(int(p))] for e, p in zip(entities, incomes)])


def simulate(rng, merit, polarity, noise, decimals=1):
    m, k = len(merit), len(polarity)
    loading = rng.uniform(0.6, 1.4, size=k)
    centre = rng.uniform(20.0, 70.0, size=k)
    spread = rng.uniform(4.0, 12.0, size=k)
    latent = merit[:, None] * loading[None, :] + noise * rng.standard_normal((m, k))
    vals = centre[None, :] + spread[None, :] * polarity[None, :] * latent
    return np.round(vals, decimals)


def six_states(rng):
    entities = ["Avanti", "Bhadra", "Chitra", "Darsha", "Eshana", "Falguni"]
    incomes = [62_000, 85_000, 140_000, 175_000, 230_000, 310_000]
    merit = np.array([-1.2, -0.2, 0.1, 0.9, -0.6, 1.0])
    k = 24
    polarity = np.where(rng.random(k) < 0.35, -1.0, 1.0)
    values = simulate(rng, merit, polarity, noise=0.8)
    indicators = [f"ind_{i + 1:02d}" for i in range(k)]
    write_set("six_states", entities, incomes, indicators, polarity, values.tolist())


def small_sets():
    # Entity A is better on three of four indicators.
    write_set("two_entity", ["A", "B"], [90_000, 120_000],
              ["i1", "i2", "i3", "i4"], [1, 1, 1, -1],
              [[5.0, 6.0, 1.0, 3.0], [4.0, 2.0, 2.0, 4.0]])
    write_set("all_ties", ["P", "Q", "R"], [80_000, 120_000, 260_000],
              ["t1", "t2", "t3"], [1, -1, 1],
              [[1.0, 2.0, 3.0]] * 3)
    # Z is worst on every indicator, so its merit MLE is -infinity.
    write_set("zero_wins", ["X", "Y", "Z"], [80_000, 120_000, 260_000],
              ["z1", "z2", "z3"], [1, 1, -1],
              [[3.0, 2.0, 2.0], [4.0, 1.0, 1.0], [1.0, 0.5, 9.0]])


STATES = [
    # name, per-capita income (Rs.)
    ("Andaman and Nicobar Islands", 219_842),
    ("Andhra Pradesh", 176_707),
    ("Arunachal Pradesh", 186_264),
    ("Assam", 86_857),
    ("Bihar", 46_292),
    ("Chandigarh", 330_015),
    ("Chhattisgarh", 62_944),
    ("Delhi", 354_004),
    ("Goa", 431_351),
    ("Gujarat", 212_821),
    ("Haryana", 239_535),
    ("Himachal Pradesh", 183_333),
    ("Jammu and Kashmir", 96_584),
    ("Jharkhand", 70_071),
    ("Karnataka", 221_781),
    ("Kerala", 194_322),
    ("Madhya Pradesh", 98_418),
    ("Maharashtra", 127_550),
    ("Manipur", 84_746),
    ("Meghalaya", 74_489),
    ("Mizoram", 116_229),
    ("Nagaland", 97_870),
    ("Odisha", 98_896),
    ("Puducherry", 202_496),
    ("Punjab", 154_313),
    ("Rajasthan", 115_492),
    ("Sikkim", 412_754),
    ("Tamil Nadu", 213_396),
    ("Telangana", 225_687),
    ("Tripura", 114_894),
    ("Uttar Pradesh", 65_660),
    ("Uttarakhand", 182_698),
    ("West Bengal", 108_452),
]

GROUPS = ["household", "fertility", "mortality", "family_planning", "maternal",
          "child_health", "nutrition", "adult_health", "empowerment", "awareness"]


def prior_merits(incomes, length_scale, scale, rng):
    """A draw from the sum-to-zero kernel prior over log incomes."""
    logp = np.log(np.asarray(incomes, dtype=float))
    d = logp[:, None] - logp[None, :]
    s = np.exp(-(d / length_scale) ** 2)
    s1 = s.sum(axis=1)
    c = s - np.outer(s1, s1) / s1.sum()
    lam, u = np.linalg.eigh((c + c.T) / 2)
    keep = lam > 1e-10 * lam.max()
    z = rng.standard_normal(keep.sum())
    return scale * (u[:, keep] * np.sqrt(lam[keep])) @ z


def separated(merit, n=3, gap=0.3):
    m = np.sort(merit)
    return m[-n] - m[-n - 1] > gap and m[n] - m[n - 1] > gap


def survey_like(rng, noise, scale):
    names = [s[0] for s in STATES]
    incomes = [s[1] for s in STATES]
    # Redraw until the three best and three worst are clearly apart from
    # the rest, so extreme rankings are well determined.
    while True:
        merit = prior_merits(incomes, 0.09, scale, rng)
        if separated(merit):
            break
    k = 131
    indicators = [f"{GROUPS[i % len(GROUPS)]}_{i // len(GROUPS) + 1:02d}" for i in range(k)]
    polarity = np.where(rng.random(k) < 0.4, -1.0, 1.0)
    values = simulate(rng, merit, polarity, noise=noise).astype(object)

    chandigarh = names.index("Chandigarh")
    cols = rng.permutation(k)
    broad, chandigarh_only = cols[:6], cols[6:15]
    for c in chandigarh_only:
        values[chandigarh, c] = None
    for c in broad:
        values[chandigarh, c] = None
        others = [i for i in range(len(names)) if i != chandigarh]
        for i in rng.choice(others, size=rng.integers(2, 9), replace=False):
            values[i, c] = None
    write_set("survey_like", names, incomes, indicators, polarity, values.tolist())


def main():
    rng = np.random.default_rng(20240601)
    six_states(rng)
    small_sets()
    survey_like(rng, noise=1.0, scale=1.0)


if __name__ == "__main__":
    main()
