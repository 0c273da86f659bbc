"""Method variants compared in the ablation"""

VARIANTS = {
    "baseline": {
        "description": "ResNet classifier trained on labeled data only",
        "use_unlabeled": False,
        "consistency": False,
        "supcon": False,
    },
    "mean_teacher": {
        "description": "ResNet + mean teacher",
        "use_unlabeled": True,
        "consistency": True,
        "supcon": False,
    },
    "supcon": {
        "description": "ResNet + SupConLoss",
        "use_unlabeled": False,
        "consistency": False,
        "supcon": True,
    },
    "mean_teacher_supcon": {
        "description": "ResNet + mean teacher & SupConLoss",
        "use_unlabeled": True,
        "consistency": True,
        "supcon": True,
    },
}

DEFAULT_VARIANT = "mean_teacher_supcon"
