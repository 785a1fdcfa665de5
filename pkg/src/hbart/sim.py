"""Synthetic data: the one-predictor heteroscedastic benchmark and friends."""

from __future__ import annotations

import csv

import numpy as np

from .data import DataSet, VarMeta

__all__ = ["f_true", "s_true", "simulate", "simulate_homoscedastic", "simulate_frame",
           "cars_like_rows", "write_cars_like"]


def f_true(x):
    return 4.0 * np.asarray(x, dtype=float) ** 2


def s_true(x):
    return 0.2 * np.exp(2.0 * np.asarray(x, dtype=float))


def simulate_frame(n: int, rng) -> dict:
    """Columns ``x, y, f_true, s_true`` with ``x ~ U(0, 1)`` and ``y = f + s Z``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = rng.uniform(0.0, 1.0, n)
    f, s = f_true(x), s_true(x)
    y = f + s * rng.standard_normal(n)
    return {"x": x, "y": y, "f_true": f, "s_true": s}


def simulate(n: int, rng) -> DataSet:
    cols = simulate_frame(n, rng)
    return DataSet(cols["x"][:, None], cols["y"], (VarMeta("continuous"),), ("x",), "y")


def simulate_homoscedastic(n: int, rng, d: int = 1, sigma: float = 0.5) -> DataSet:
    """``y = 4 x_1^2 + sigma Z`` with ``d`` uniform predictors (the rest are noise)."""
    x = rng.uniform(0.0, 1.0, (n, d))
    y = f_true(x[:, 0]) + sigma * rng.standard_normal(n)
    names = tuple(f"x{j + 1}" for j in range(d))
    return DataSet(x, y, tuple(VarMeta("continuous") for _ in range(d)), names, "y")


CARS_LEVELS = {
    "trim": ("430", "500", "550", "other"),
    "color": ("Black", "Silver", "White", "other"),
    "displacement": ("4.6", "5.5", "other"),
    "isOneOwner": ("f", "t"),
}
CARS_HEADER = ("price", "trim", "isOneOwner", "mileage", "year", "color", "displacement")


def cars_like_rows(n: int, rng) -> list[tuple]:
    """Synthetic used-car records with the 2-continuous + 4-categorical layout.

    Price falls with mileage and rises with year; its noise grows with
    mileage, so the stand-in is heteroscedastic like real listings.
    """
    mileage = rng.uniform(1_000, 200_000, n)
    year = rng.integers(1995, 2014, n)
    trim = rng.choice(CARS_LEVELS["trim"], n, p=(0.1, 0.15, 0.6, 0.15))
    color = rng.choice(CARS_LEVELS["color"], n)
    disp = rng.choice(CARS_LEVELS["displacement"], n, p=(0.3, 0.6, 0.1))
    owner = rng.choice(CARS_LEVELS["isOneOwner"], n, p=(0.8, 0.2))
    trim_eff = {"430": -5_000.0, "500": 0.0, "550": 8_000.0, "other": 3_000.0}
    mean = (60_000 - 0.25 * mileage + 2_500 * (year - 2004)
            + np.array([trim_eff[t] for t in trim]) + 2_000 * (owner == "t"))
    sd = 1_500 + 0.06 * mileage
    price = np.maximum(mean + sd * rng.standard_normal(n), 500.0)
    return [(round(float(price[i]), 2), str(trim[i]), str(owner[i]), round(float(mileage[i]), 1),
             int(year[i]), str(color[i]), str(disp[i])) for i in range(n)]


def write_cars_like(path, n: int, rng) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CARS_HEADER)
        w.writerows(cars_like_rows(n, rng))
