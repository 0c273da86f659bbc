"""Synthetic benchmarks"""

STANDARD_BENCHMARK = {
    "per_class": 200,
    "size": 24,
    "labeled_fraction": 0.1,
    "val_per_class": 50,
    "epochs": 30,
    "seeds": (0, 1, 2),
    "noise_rate": 0.02,
    "variants": ("baseline", "mean_teacher", "supcon", "mean_teacher_supcon"),
}

# small enough for a unit-test run of the whole ablation pipeline
SMOKE_BENCHMARK = {
    "per_class": 12,
    "size": 16,
    "labeled_fraction": 0.5,
    "val_per_class": 4,
    "epochs": 1,
    "seeds": (0,),
    "noise_rate": 0.0,
    "variants": ("baseline", "mean_teacher_supcon"),
}

BENCHMARKS = {
    "standard": STANDARD_BENCHMARK,
    "smoke": SMOKE_BENCHMARK,
}
