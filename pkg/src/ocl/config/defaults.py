# Fallbacks so every cfg[...] lookup resolves; config.yaml and presets override.
DEFAULT_CFG = {
    "app": {"out_dir": "out", "logs_dir": "logs"},
    "experiment": {
        "name": "default",
        "strategies": ["er", "ocar"],
        "seeds": [0],
        "buffer_capacity": 100,
        "eval_every": 10,
        "track_full_loss": False,
        "trajectory": False,
        "trajectory_every": 10,
        "probe": False,
        "probe_max_train": None,
        "eval_through_task": None,
        "save_final_params": True,
    },
    "stream": {
        "kind": "class_incremental",
        "dataset": "blobs",
        "dataset_split": "train",
        "n_tasks": 5,
        "classes_per_task": 2,
        "eval_fraction": 0.1,
        "samples_per_task": 1000,
        "eval_per_task": 200,
        "dim": 10,
        "noise_var": 0.01,
        "eig_low": 0.1,
        "eig_high": 10.0,
        "max_angle": 180.0,
        "per_task": None,
        "blobs": {
            "n_classes": 10,
            "per_class": 200,
            "dim": 16,
            "spread": 1.0,
            "separation": 4.0,
        },
    },
    "model": {"hidden": [100, 100], "head": "softmax_ce", "init": "random"},
    "hyperparams": {
        "default": {
            "alpha": 0.05,
            "inner_steps": 1,
            "new_batch_size": 10,
            "buffer_batch_size": 10,
        }
    },
}
