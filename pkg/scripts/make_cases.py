"""Author the shipped case files (33-bus feeder and 5-bus toy) and their
scenario configs. Run from repo root: python scripts/make_cases.py"""
import json
from pathlib import Path

# Baran-Wu 33-bus feeder: (from, to, R_ohm, X_ohm), 0-indexed buses.
BRANCHES = [
    (0, 1, 0.0922, 0.0470),
    (1, 2, 0.4930, 0.2511),
    (2, 3, 0.3660, 0.1864),
    (3, 4, 0.3811, 0.1941),
    (4, 5, 0.8190, 0.7070),
    (5, 6, 0.1872, 0.6188),
    (6, 7, 0.7114, 0.2351),
    (7, 8, 1.0300, 0.7400),
    (8, 9, 1.0440, 0.7400),
    (9, 10, 0.1966, 0.0650),
    (10, 11, 0.3744, 0.1238),
    (11, 12, 1.4680, 1.1550),
    (12, 13, 0.5416, 0.7129),
    (13, 14, 0.5910, 0.5260),
    (14, 15, 0.7463, 0.5450),
    (15, 16, 1.2890, 1.7210),
    (16, 17, 0.7320, 0.5740),
    (1, 18, 0.1640, 0.1565),
    (18, 19, 1.5042, 1.3554),
    (19, 20, 0.4095, 0.4784),
    (20, 21, 0.7089, 0.9373),
    (2, 22, 0.4512, 0.3083),
    (22, 23, 0.8980, 0.7091),
    (23, 24, 0.8960, 0.7011),
    (5, 25, 0.2030, 0.1034),
    (25, 26, 0.2842, 0.1447),
    (26, 27, 1.0590, 0.9337),
    (27, 28, 0.8042, 0.7006),
    (28, 29, 0.5075, 0.2585),
    (29, 30, 0.9744, 0.9630),
    (30, 31, 0.3105, 0.3619),
    (31, 32, 0.3410, 0.5302),
]
# Nominal loads at each bus (kW, kVAr), bus 0 = root (no load).
LOADS = {
    1: (100, 60), 2: (90, 40), 3: (120, 80), 4: (60, 30), 5: (60, 20),
    6: (200, 100), 7: (200, 100), 8: (60, 20), 9: (60, 20), 10: (45, 30),
    11: (60, 35), 12: (60, 35), 13: (120, 80), 14: (60, 10), 15: (60, 20),
    16: (60, 20), 17: (90, 40), 18: (90, 40), 19: (90, 40), 20: (90, 40),
    21: (90, 40), 22: (90, 50), 23: (420, 200), 24: (420, 200), 25: (60, 25),
    26: (60, 25), 27: (60, 20), 28: (120, 70), 29: (200, 600), 30: (150, 70),
    31: (210, 100), 32: (60, 40),
}

BASE_MVA = 10.0
BASE_KV = 12.66
Z_BASE = BASE_KV ** 2 / BASE_MVA

# Three contiguous feeder sections.
REGION = {}
for b in [0, 1, 2, 3, 4, 18, 19, 20, 21, 22, 23, 24]:
    REGION[b] = 1
for b in range(5, 18):
    REGION[b] = 2
for b in range(25, 33):
    REGION[b] = 3

# Devices: one capacitor + two PV inverters per region; capacitors never on PV buses.
SCS = [
    {"bus": 3, "q_mvar": 0.15, "window": [6, 22]},
    {"bus": 13, "q_mvar": 0.15, "window": [6, 22]},
    {"bus": 29, "q_mvar": 0.15, "window": [6, 22]},
]
PV_SCALE_CASE = 1.0  # multiplies the s_mva values below
PVS = [
    {"bus": 21, "s_mva": 0.50, "lambda": 0.3},
    {"bus": 24, "s_mva": 0.60, "lambda": 0.3},
    {"bus": 16, "s_mva": 0.55, "lambda": 0.3},
    {"bus": 17, "s_mva": 0.55, "lambda": 0.3},
    {"bus": 31, "s_mva": 0.65, "lambda": 0.3},
    {"bus": 32, "s_mva": 0.55, "lambda": 0.3},
]

LOAD_SCALE = 1.0


def make_ieee33():
    case = {
        "base_mva": BASE_MVA,
        "base_kv": BASE_KV,
        "v_ref": 1.0,
        "v_min": 0.95,
        "v_max": 1.05,
        "regions": 3,
        "buses": [{"id": b, "region": REGION[b]} for b in range(33)],
        "branches": [
            {"from": f, "to": t, "r_pu": round(r / Z_BASE, 8), "x_pu": round(x / Z_BASE, 8)}
            for f, t, r, x in BRANCHES
        ],
        "oltc": {"positions": 11, "step_pu": 0.006, "daily_change_limit": 4},
        "scs": SCS,
        "pvs": [dict(p, s_mva=round(p["s_mva"] * PV_SCALE_CASE, 6)) for p in PVS],
    }
    scenario = {
        "seed": 20260809,
        "days": 365,
        "load_peaks_mw": [round(LOADS.get(b, (0, 0))[0] / 1000.0 * LOAD_SCALE, 6) for b in range(33)],
        "power_factor": 0.93,
        "pv_scale": 1.0,
        "seasonal_amplitude": 0.08,
        "cloud_min": 0.2,
        "day_noise": 0.10,
        "forecast_noise_sigma": 0.05,
        "daylight": [6.0, 18.0],
    }
    return case, scenario


def make_toy5():
    case = {
        "base_mva": 10.0,
        "base_kv": 12.66,
        "v_ref": 1.0,
        "v_min": 0.95,
        "v_max": 1.05,
        "regions": 1,
        "buses": [{"id": b, "region": 1} for b in range(5)],
        "branches": [
            {"from": 0, "to": 1, "r_pu": 0.02, "x_pu": 0.04},
            {"from": 1, "to": 2, "r_pu": 0.03, "x_pu": 0.05},
            {"from": 2, "to": 3, "r_pu": 0.03, "x_pu": 0.05},
            {"from": 3, "to": 4, "r_pu": 0.03, "x_pu": 0.06},
        ],
        "oltc": {"positions": 11, "step_pu": 0.006, "daily_change_limit": 4},
        "scs": [],
        "pvs": [{"bus": 4, "s_mva": 2.5, "lambda": 0.8}],
    }
    scenario = {
        "seed": 71,
        "days": 365,
        "load_peaks_mw": [0.0, 0.6, 1.2, 0.9, 0.9],
        "power_factor": 0.9,
        "pv_scale": 0.4,
        "seasonal_amplitude": 0.15,
        "cloud_min": 0.2,
        "day_noise": 0.10,
        "forecast_noise_sigma": 0.05,
        "daylight": [6.0, 18.0],
    }
    return case, scenario


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "gridvvc" / "cases"
    out.mkdir(parents=True, exist_ok=True)
    for name, (case, scen) in {"ieee33": make_ieee33(), "toy5": make_toy5()}.items():
        (out / f"{name}.json").write_text(json.dumps(case, indent=1) + "\n")
        (out / f"{name}_scenario.json").write_text(json.dumps(scen, indent=1) + "\n")
        print("wrote", name)
