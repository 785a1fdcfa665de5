"""
Used-car prices: cross-validating kappa
=======================================

The real listings are not shipped, so we generate a stand-in with the same
layout (price, two numeric and four categorical columns, 15 predictors after
dummy coding) and noise that grows with mileage.

Chains are kept short so the script finishes in a few minutes.
"""

from pathlib import Path

import numpy as np

from hbart.data import load_csv, make_cutpoints
from hbart.diagnostics import cv_kappa, write_activity, write_cv
from hbart.priors import default_config
from hbart.sampler import SamplerSettings, run_chain
from hbart.sim import write_cars_like

out = Path("demo_out")
out.mkdir(exist_ok=True)
write_cars_like(out / "cars.csv", 600, np.random.default_rng(7))
ds = load_csv(out / "cars.csv", "price")
print(ds.d, "predictors:", ", ".join(ds.names))

settings = SamplerSettings(n_iter=1200, burn_in=400, seed=3)
small = dict(m=50, m_prime=10)

# 5-fold CV of the held-out e-statistic over kappa; smaller is better
cv = cv_kappa(ds, [2.0, 5.0, 10.0], k=5, settings=settings, prior_kw=small)
for kappa, med in zip(cv.kappas, cv.medians()):
    print(f"kappa={kappa:g}  median e-statistic={med:.5f}")
print("selected kappa:", cv.selected)
write_cv(cv, out / "cv.csv")

# %%
# Refit at the chosen kappa and look at which variables the trees use
fit = run_chain(ds, make_cutpoints(ds), default_config(ds, kappa=cv.selected, **small), settings)
write_activity(fit, out / "activity.csv", list(ds.names))
for line in (out / "activity.csv").read_text().splitlines():
    print(line)
