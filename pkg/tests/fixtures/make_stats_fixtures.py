"""Regenerate ``stats_fixtures.json`` from scipy/statsmodels.

Run once with the ``fixtures`` extra installed; the committed JSON is what
the tests read, so the test suite itself never imports scipy.
"""

import json
from pathlib import Path

import numpy as np
import pandas as pd
import statsmodels.api as sm
import statsmodels.formula.api as smf
from scipy import stats


def make(seed: int, n_groups: int) -> dict:
    rng = np.random.default_rng(seed)
    sizes = [12 // n_groups] * n_groups
    groups = [rng.normal(loc=0.4 * i, scale=1.0 + 0.2 * i, size=s).round(6) for i, s in enumerate(sizes)]
    f, p = stats.f_oneway(*groups)
    out = {"seed": seed, "groups": [g.tolist() for g in groups],
           "anova": {"F": float(f), "p": float(p)}}
    if n_groups == 2:
        t, pt = stats.ttest_ind(groups[0], groups[1], equal_var=True)
        tw, pw = stats.ttest_ind(groups[0], groups[1], equal_var=False)
        out["t_pooled"] = {"t": float(t), "p": float(pt)}
        out["t_welch"] = {"t": float(tw), "p": float(pw)}
    x = rng.normal(size=12).round(6)
    y = (0.6 * x + rng.normal(size=12)).round(6)
    r, pr = stats.pearsonr(x, y)
    out["pearson"] = {"x": x.tolist(), "y": y.tolist(), "r": float(r), "p": float(pr)}
    age = rng.uniform(55, 85, size=12).round(3)
    sex = np.array([0.0, 1.0] * 6)
    group = np.array(["HC"] * 6 + ["D"] * 6)
    outcome = (0.05 * age + 0.8 * (group == "D") + 0.3 * sex + rng.normal(size=12)).round(6)
    df = pd.DataFrame({"y": outcome, "g": group, "age": age, "sex": sex})
    fit = smf.ols("y ~ C(g) + age + sex", data=df).fit()
    table = sm.stats.anova_lm(fit, typ=2)
    ss_g = float(table.loc["C(g)", "sum_sq"])
    ss_r = float(table.loc["Residual", "sum_sq"])
    out["ancova"] = {"outcome": outcome.tolist(), "group": group.tolist(), "age": age.tolist(),
                     "sex": sex.tolist(), "F": float(table.loc["C(g)", "F"]),
                     "p": float(table.loc["C(g)", "PR(>F)"]), "partial_eta_sq": ss_g / (ss_g + ss_r)}
    return out


if __name__ == "__main__":
    fixtures = [make(101, 2), make(202, 3), make(303, 2)]
    path = Path(__file__).with_name("stats_fixtures.json")
    path.write_text(json.dumps(fixtures, indent=1) + "\n")
    print(f"wrote {path}")
