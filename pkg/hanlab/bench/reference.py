# HANLAB
# ***
# Published reference numbers, printed beside measured values and never measured here

import pandas as pd

SECURITY_REFERENCE = {
    "trained": {
        "Average": [0.000009, 0.0644, 0.0653, 0.0041, 0.0013],
        "Maximum differences": [0.001772, 1.4250, 1.6599, 0.1937, 0.1179],
    },
    "cppu": {
        "Average": [0.0002, 0.1037, 0.1048, 0.0691, 0.0633],
        "Maximum differences": [0.0412, 1.4341, 1.2353, 1.5290, 1.7215],
    },
    "ippu": {
        "Average": [0.0004, 0.1025, 0.1055, 0.1060, 0.1047],
        "Maximum differences": [0.0569, 1.5140, 1.3213, 1.4687, 1.9999],
    },
}

FL_REFERENCE = {
    "mnist": {"accuracy_change": 0.0048, "mean_avg_diff": 0.0047, "std_avg_diff": 0.0003,
              "mean_max_diff": 0.1219, "std_max_diff": 0.0367},
    "fashion_mnist": {"accuracy_change": -0.0027, "mean_avg_diff": 0.0056, "std_avg_diff": 0.0006,
                      "mean_max_diff": 0.1904, "std_max_diff": 0.0461},
    "cifar10": {"accuracy_change": -0.0135, "mean_avg_diff": 0.0097, "std_avg_diff": 0.0016,
                "mean_max_diff": 0.2941, "std_max_diff": 0.0623},
}

COLLUSION_REFERENCE = {
    "PCAOM": {"mad": 0.31067, "var": 0.14935},
    "PCAPD": {"mad": 0.30340, "var": 0.14535},
}

# batch size -> seconds on one A800
TIMING_REFERENCE = {
    "encrypt": {100000: 0.020451, 200000: 0.035654, 300000: 0.053236},
    "aggregate": {100000: 0.018023, 200000: 0.035722, 300000: 0.053374},
    "keygen": {100000: 0.000034, 200000: 0.000029, 300000: 0.000027},
}

SECFED_SECONDS_3000 = 6.5
HANS_SECONDS_3000 = 0.00107
SPEEDUP_VS_SECFED = 6075

# model size -> (HANs MB, SecFed MB) for one round
COMM_REFERENCE_MB = {
    616420: (232.8, 2.6),
    7027860: (884.7, 30.2),
}
COMM_OVERHEAD_RATIO = 29.2


def security_reference_frame(phase: str) -> pd.DataFrame:
    columns = ["HANs", "Atk 1", "Atk 1 (Dbl)", "Atk 2", "Atk 2 (Dbl)"]
    return pd.DataFrame.from_dict(SECURITY_REFERENCE[phase], orient="index", columns=columns)


def timing_reference_frame() -> pd.DataFrame:
    frame = pd.DataFrame(TIMING_REFERENCE)
    frame.index.name = "batch_size"
    return frame


def comm_reference_frame() -> pd.DataFrame:
    frame = pd.DataFrame.from_dict(COMM_REFERENCE_MB, orient="index", columns=["hans_mb", "secfed_mb"])
    frame.index.name = "model_size"
    return frame
